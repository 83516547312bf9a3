// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splatsim/dynamics.hpp"
#include "splatsim/features.hpp"
#include "splatsim/geometry.hpp"
#include "splatsim/image.hpp"

namespace splatsim::io {

/// Particle trajectory container mirroring the 3GST binary layout.
struct Trajectory {
    int d_inv = 0;
    int d_dyn = 0;
    std::vector<std::vector<features::ParticleState>> frames;
};

/// 3GST binary format: magic "3GST", version u16, T u16, d_inv u16,
/// d_dyn u16, then per frame N_k u32 followed by N_k records of
/// (3 x f32 position, d_inv x f32, d_dyn x f32, u8 frozen). Little-endian.
inline constexpr std::uint16_t kTrajectoryVersion = 1;

Trajectory load_trajectory(const std::string& path);
void save_trajectory(const Trajectory& traj, const std::string& path);

/// Camera rig JSON: a list of {K: 9 row-major, R: 9 row-major, t: 3,
/// width, height}. K is normalized so K[2][2] = 1 and every camera is
/// validated on load.
std::vector<geometry::Camera> load_camera_rig(const std::string& path);
void save_camera_rig(const std::vector<geometry::Camera>& cams, const std::string& path);

/// 8-bit PNG I/O. Channels are clamped to [0, 1] and quantized on write.
void write_png(const Image& image, const std::string& path);
Image load_png(const std::string& path);
void write_png_gray(const GrayImage& image, const std::string& path);
GrayImage load_png_gray(const std::string& path);

/// 10 * log10(1 / MSE) for images in [0, 1]; +infinity for identical
/// images.
double psnr(const Image& a, const Image& b);

/// Shape-prefixed named tensor container ("3GSW" binary format: magic,
/// version u16, count u32, then per tensor name, rank, u32 dims, f64 data).
struct Tensor {
    std::vector<std::uint32_t> shape;
    std::vector<double> data;

    static Tensor from_matrix(const Eigen::MatrixXd& m);
    static Tensor from_vector(const Eigen::VectorXd& v);
    static Tensor scalar(double v);
    Eigen::MatrixXd to_matrix() const;
    Eigen::VectorXd to_vector() const;
    double to_scalar() const;
};
using TensorMap = std::map<std::string, Tensor>;

inline constexpr std::uint16_t kWeightsVersion = 1;

void save_weights(const TensorMap& tensors, const std::string& path);
TensorMap load_weights(const std::string& path);

TensorMap pack_dynamics_weights(const dynamics::DynamicsWeights& w);
dynamics::DynamicsWeights unpack_dynamics_weights(const TensorMap& tensors,
                                                  const dynamics::DynamicsConfig& cfg);

TensorMap pack_gaussian_head(const features::GaussianHead& head);
features::GaussianHead unpack_gaussian_head(const TensorMap& tensors);

TensorMap pack_film_network(const features::FilmNetwork& net);
features::FilmNetwork unpack_film_network(const TensorMap& tensors);

/// key = value config text; list values are comma-separated. Keys mirror
/// the DynamicsConfig field names; '#' starts a comment.
dynamics::DynamicsConfig load_config(const std::string& path);
void save_config(const dynamics::DynamicsConfig& cfg, const std::string& path);

}  // namespace splatsim::io
