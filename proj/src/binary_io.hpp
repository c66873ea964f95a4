// Copyright Contributors to the cagesplat project
// SPDX-License-Identifier: Apache-2.0

// Little-endian POD helpers shared by the binary file formats. The host is
// assumed little-endian (checked at compile time).

#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>

namespace cagesplat::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
    requires std::is_trivially_copyable_v<T>
void write_pod(std::ostream &out, const T &v) {
    out.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <class T>
    requires std::is_trivially_copyable_v<T>
T read_pod(std::istream &in) {
    T v{};
    in.read(reinterpret_cast<char *>(&v), sizeof(T));
    return v;
}

template <class T>
void write_span(std::ostream &out, std::span<const T> data) {
    out.write(reinterpret_cast<const char *>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
}

template <class T>
bool read_span(std::istream &in, std::span<T> data) {
    in.read(reinterpret_cast<char *>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    return static_cast<bool>(in);
}

inline void write_magic(std::ostream &out, const char (&magic)[5]) { out.write(magic, 4); }

inline bool check_magic(std::istream &in, const char (&magic)[5]) {
    char buf[4] = {};
    in.read(buf, 4);
    return in && std::string(buf, 4) == std::string(magic, 4);
}

} // namespace cagesplat::io
