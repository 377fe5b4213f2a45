#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "error.hpp"

namespace cb {

/// Little-endian binary writer for the model file formats.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw DataError("cannot write file: " + path.string());
    }

    void magic(std::string_view m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
        out_.write(reinterpret_cast<const char*>(&v), sizeof v);
    }

    void put_string(std::string_view s) {
        put<std::uint64_t>(s.size());
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put_vector(const std::vector<T>& v) {
        put<std::uint64_t>(v.size());
        out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    }

    void put_strings(const std::vector<std::string>& v) {
        put<std::uint64_t>(v.size());
        for (const auto& s : v) put_string(s);
    }

    void finish() {
        out_.flush();
        if (!out_) throw DataError("write failed: " + path_.string());
    }

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw DataError("cannot open file: " + path.string());
    }

    void expect_magic(std::string_view m) {
        std::string buf(m.size(), '\0');
        in_.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!in_ || buf != m)
            throw DataError(path_.string() + ": not a " + std::string(m) + " file (bad magic bytes)");
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        T v{};
        in_.read(reinterpret_cast<char*>(&v), sizeof v);
        check();
        return v;
    }

    std::string get_string() {
        const auto n = length();
        std::string s(n, '\0');
        in_.read(s.data(), static_cast<std::streamsize>(n));
        check();
        return s;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    std::vector<T> get_vector() {
        const auto n = length();
        std::vector<T> v(n);
        in_.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
        check();
        return v;
    }

    std::vector<std::string> get_strings() {
        const auto n = length();
        std::vector<std::string> v;
        v.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) v.push_back(get_string());
        return v;
    }

private:
    std::uint64_t length() {
        const auto n = get<std::uint64_t>();
        if (n > (1ULL << 34)) throw DataError(path_.string() + ": corrupt length field");
        return n;
    }

    void check() {
        if (!in_) throw DataError(path_.string() + ": truncated file");
    }

    std::ifstream in_;
    std::filesystem::path path_;
};

}  // namespace cb
