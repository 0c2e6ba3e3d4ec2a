#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace latent_lens {

// Checkpoint container: one line of JSON header, then raw little-endian f32
// tensors back to back (row-major), with no padding.
void write_tensor_file(const std::filesystem::path& path, const nlohmann::json& header,
    const std::vector<Eigen::MatrixXd>& tensors);

struct TensorFile {
    nlohmann::json header;
    std::vector<float> payload;
};

TensorFile read_tensor_file(const std::filesystem::path& path);

// Pops the next rows x cols tensor (row-major) from the payload starting at `offset`.
Eigen::MatrixXd take_tensor(const TensorFile& file, std::size_t& offset, Eigen::Index rows, Eigen::Index cols);

// Rounds every entry to the nearest f32 so that saving loses nothing.
void round_to_f32(Eigen::MatrixXd& m);
void round_to_f32(Eigen::VectorXd& v);

} // namespace latent_lens
