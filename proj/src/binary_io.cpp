#include "rainex/binary_io.hpp"

namespace rainex::io {

BinaryWriter::BinaryWriter(std::filesystem::path path) : path_(std::move(path)) {}

void BinaryWriter::magic(std::string_view four_cc) {
    if (four_cc.size() != 4) throw ConfigError("magic must be 4 bytes");
    buffer_.insert(buffer_.end(), four_cc.begin(), four_cc.end());
}

void BinaryWriter::put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buffer_.insert(buffer_.end(), s.begin(), s.end());
}

void BinaryWriter::commit() {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    auto tmp = path_;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open " + tmp.string() + " for writing");
        out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path_);
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : name_(path.string()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open " + name_);
    in.seekg(0, std::ios::end);
    auto size = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    data_.resize(size);
    in.read(data_.data(), static_cast<std::streamsize>(size));
    if (!in) throw FormatError("read failed: " + name_);
}

void BinaryReader::expect_magic(std::string_view four_cc) {
    need(4);
    if (std::string_view(data_.data() + pos_, 4) != four_cc)
        throw FormatError(name_ + ": bad magic, expected " + std::string(four_cc));
    pos_ += 4;
}

std::string BinaryReader::get_string() {
    auto n = get<std::uint32_t>();
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
}

void BinaryReader::expect_end() const {
    if (!at_end()) throw FormatError(name_ + ": trailing bytes after payload");
}

void BinaryReader::need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError(name_ + ": truncated file");
}

}  // namespace rainex::io
