#include "latent_lens/tensor_file.hpp"

#include "latent_lens/error.hpp"

#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>

namespace latent_lens {

void write_tensor_file(const std::filesystem::path& path, const nlohmann::json& header,
    const std::vector<Eigen::MatrixXd>& tensors)
{
    std::vector<std::uint8_t> bytes;
    for (const auto& t : tensors) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t(r, c)));
                for (int i = 0; i < 4; ++i) {
                    bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
                }
            }
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing: " + std::strerror(errno));
    }
    out << header.dump() << '\n';
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

TensorFile read_tensor_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw FormatError(path.string() + ": missing checkpoint header");
    }
    TensorFile file;
    try {
        file.header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid checkpoint header: " + e.what());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) {
        throw FormatError(path.string() + ": corrupt file: payload not a whole number of f32 values");
    }
    file.payload.resize(bytes.size() / 4);
    for (std::size_t i = 0; i < file.payload.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
            bits |= std::uint32_t(bytes[4 * i + b]) << (8 * b);
        }
        file.payload[i] = std::bit_cast<float>(bits);
        if (!std::isfinite(file.payload[i])) {
            throw FormatError(path.string() + ": non-finite data");
        }
    }
    return file;
}

Eigen::MatrixXd take_tensor(const TensorFile& file, std::size_t& offset, Eigen::Index rows, Eigen::Index cols)
{
    const auto count = static_cast<std::size_t>(rows * cols);
    if (offset + count > file.payload.size()) {
        throw FormatError("corrupt file: checkpoint payload shorter than declared shapes");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            m(r, c) = file.payload[offset++];
        }
    }
    return m;
}

void round_to_f32(Eigen::MatrixXd& m)
{
    m = m.unaryExpr([](double v) { return double(static_cast<float>(v)); });
}

void round_to_f32(Eigen::VectorXd& v)
{
    v = v.unaryExpr([](double x) { return double(static_cast<float>(x)); });
}

} // namespace latent_lens
