#include "latentdiff/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "latentdiff/error.hpp"

namespace latentdiff {

std::string encode_ltt(const LatentTensor& tensor) {
    std::string out = "{\"shape\":" + shape_to_string(tensor.shape()) + ",\"dtype\":\"f32\",\"order\":\"row-major\"}\n";
    const std::size_t header = out.size();
    out.resize(header + tensor.size() * 4);
    char* dst = out.data() + header;
    for (float v : tensor.data()) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    return out;
}

LatentTensor decode_ltt(std::string_view bytes) {
    const auto newline = bytes.find('\n');
    if (newline == std::string_view::npos) throw Error(ErrorCode::ParseError, "missing .ltt header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(0, newline));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("bad .ltt header: ") + e.what());
    }
    if (!header.is_object() || header.value("dtype", "") != "f32" || header.value("order", "") != "row-major" ||
        !header.contains("shape") || !header["shape"].is_array()) {
        throw Error(ErrorCode::ParseError, ".ltt header must declare shape, dtype f32, order row-major");
    }
    Shape shape;
    for (const auto& e : header["shape"]) {
        if (!e.is_number_unsigned()) throw Error(ErrorCode::ParseError, "shape extents must be positive integers");
        shape.push_back(e.get<std::size_t>());
    }
    const std::string_view payload = bytes.substr(newline + 1);
    if (payload.size() != element_count(shape) * 4) {
        throw Error(ErrorCode::ParseError, "payload length does not match shape " + shape_to_string(shape));
    }
    std::vector<float> data(element_count(shape));
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[i * 4 + b])) << (8 * b);
        }
        data[i] = std::bit_cast<float>(bits);
    }
    return LatentTensor(std::move(shape), std::move(data));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

void write_ltt(const std::filesystem::path& path, const LatentTensor& tensor) { write_file(path, encode_ltt(tensor)); }

LatentTensor read_ltt(const std::filesystem::path& path) { return decode_ltt(read_file(path)); }

}  // namespace latentdiff
