#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "rainex/error.hpp"

namespace rainex::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian; big-endian hosts need byte swapping");

/// Buffered little-endian writer. The file is only replaced on commit().
class BinaryWriter {
public:
    explicit BinaryWriter(std::filesystem::path path);

    void magic(std::string_view four_cc);
    template <typename T>
    void put(T value) {
        static_assert(std::is_arithmetic_v<T>);
        char bytes[sizeof(T)];
        std::memcpy(bytes, &value, sizeof(T));
        buffer_.insert(buffer_.end(), bytes, bytes + sizeof(T));
    }
    template <typename T>
    void put_array(std::span<const T> values) {
        static_assert(std::is_arithmetic_v<T>);
        const char* p = reinterpret_cast<const char*>(values.data());
        buffer_.insert(buffer_.end(), p, p + values.size_bytes());
    }
    void put_string(std::string_view s);

    /// Writes to a temporary sibling and renames it over the target.
    void commit();

private:
    std::filesystem::path path_;
    std::vector<char> buffer_;
};

/// Reads a whole file and decodes little-endian fields, throwing FormatError on truncation.
class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path);

    void expect_magic(std::string_view four_cc);
    template <typename T>
    T get() {
        static_assert(std::is_arithmetic_v<T>);
        need(sizeof(T));
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    template <typename T>
    void get_array(std::span<T> out) {
        static_assert(std::is_arithmetic_v<T>);
        need(out.size_bytes());
        std::memcpy(out.data(), data_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
    }
    std::string get_string();
    bool at_end() const { return pos_ == data_.size(); }
    void expect_end() const;
    const std::string& name() const { return name_; }

private:
    void need(std::size_t n) const;

    std::string name_;
    std::vector<char> data_;
    std::size_t pos_ = 0;
};

}  // namespace rainex::io
