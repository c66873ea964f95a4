// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>

namespace cagesplat::detail {

/// splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and indices.
template <class... Ts>
constexpr std::uint64_t mix_seed(std::uint64_t base, Ts... parts) {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t p : {static_cast<std::uint64_t>(parts)...}) h = splitmix64(h ^ p);
    return h;
}

} // namespace cagesplat::detail
