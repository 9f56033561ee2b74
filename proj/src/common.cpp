#include "ragc/common.hpp"

namespace ragc {

std::string_view class_tag(ObjectClass c) {
  switch (c) {
    case ObjectClass::pedestrian:
      return "ped";
    case ObjectClass::vehicle:
      return "veh";
    case ObjectClass::clutter:
      return "clt";
  }
  return "clt";
}

ObjectClass class_from_tag(std::string_view tag) {
  if (tag == "ped") return ObjectClass::pedestrian;
  if (tag == "veh") return ObjectClass::vehicle;
  if (tag == "clt") return ObjectClass::clutter;
  throw DataError("unknown object class tag '" + std::string(tag) + "'");
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a simple combination
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace ragc
