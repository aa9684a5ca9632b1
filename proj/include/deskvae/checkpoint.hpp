// Copyright 2026 The deskvae Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <variant>

#include "deskvae/error.hpp"
#include "deskvae/tensor.hpp"

namespace deskvae {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

/// Flat named-entry archive: "DKVAECKP" | u32 version | u32 entry count, then
/// per entry u32 name length, name bytes, u8 type and the payload
/// (text: u64 length + bytes; tensor: 4 x i32 shape + f64 values; int: i64).
class Archive {
 public:
  using Entry = std::variant<std::string, Tensor, std::int64_t>;

  void put_text(const std::string& name, std::string v) { entries_[name] = std::move(v); }
  void put_tensor(const std::string& name, Tensor v) { entries_[name] = std::move(v); }
  void put_int(const std::string& name, std::int64_t v) { entries_[name] = v; }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  const std::string& text(const std::string& name) const { return get<std::string>(name); }
  const Tensor& tensor(const std::string& name) const { return get<Tensor>(name); }
  std::int64_t integer(const std::string& name) const { return get<std::int64_t>(name); }

  void save(const std::string& path) const {
    // Written to a side file and renamed so a crash never leaves a torn archive.
    const std::string tmp = path + ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary);
      if (!os) throw IoError("cannot open '" + tmp + "' for writing");
      os.write(kMagic, 8);
      write_pod<std::uint32_t>(os, kVersion);
      write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entries_.size()));
      for (const auto& [name, entry] : entries_) {
        write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(entry.index()));
        if (const auto* s = std::get_if<std::string>(&entry)) {
          write_pod<std::uint64_t>(os, s->size());
          os.write(s->data(), static_cast<std::streamsize>(s->size()));
        } else if (const auto* t = std::get_if<Tensor>(&entry)) {
          const Shape sh = t->shape();
          for (int d : {sh.n, sh.c, sh.h, sh.w}) write_pod<std::int32_t>(os, d);
          os.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
        } else {
          write_pod<std::int64_t>(os, std::get<std::int64_t>(entry));
        }
      }
      if (!os) throw IoError("failed writing '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move archive into place at '" + path + "': " + ec.message());
  }

  static Archive load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError("'" + path + "' is not a checkpoint archive");
    if (read_pod<std::uint32_t>(is) != kVersion) throw IoError("'" + path + "': unsupported archive version");
    Archive a;
    const auto count = read_pod<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name(read_pod<std::uint32_t>(is), '\0');
      is.read(name.data(), static_cast<std::streamsize>(name.size()));
      const auto type = read_pod<std::uint8_t>(is);
      if (type == 0) {
        std::string s(read_pod<std::uint64_t>(is), '\0');
        is.read(s.data(), static_cast<std::streamsize>(s.size()));
        a.entries_[name] = std::move(s);
      } else if (type == 1) {
        Shape sh;
        sh.n = read_pod<std::int32_t>(is);
        sh.c = read_pod<std::int32_t>(is);
        sh.h = read_pod<std::int32_t>(is);
        sh.w = read_pod<std::int32_t>(is);
        if (sh.n < 0 || sh.c < 0 || sh.h < 0 || sh.w < 0) throw IoError("'" + path + "': corrupt tensor shape");
        Tensor t(sh);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        a.entries_[name] = std::move(t);
      } else if (type == 2) {
        a.entries_[name] = read_pod<std::int64_t>(is);
      } else {
        throw IoError("'" + path + "': unknown entry type");
      }
      if (!is) throw IoError("'" + path + "': truncated archive");
    }
    return a;
  }

 private:
  static constexpr char kMagic[8] = {'D', 'K', 'V', 'A', 'E', 'C', 'K', 'P'};
  static constexpr std::uint32_t kVersion = 1;

  template <typename T>
  static void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("truncated archive");
    return v;
  }
  template <typename T>
  const T& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError("checkpoint has no entry '" + name + "'");
    const T* v = std::get_if<T>(&it->second);
    if (!v) throw IoError("checkpoint entry '" + name + "' has the wrong type");
    return *v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace deskvae
