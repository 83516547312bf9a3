// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "splatsim/image.hpp"

namespace splatsim::loss {

/// Trajectory loss weighting: past frames averaged with weight (1-lambda),
/// future frames summed with decay gamma^j and weight lambda.
struct LossConfig {
    double lambda = 0.5;
    double gamma = 0.87;
    double beta = 0.05;
    int past_length = 4;   // T
    int future_length = 12; // T'
};

using PerceptualMetric = std::function<double(const Image&, const Image&)>;

/// Always returns 0; stands in for a perceptual network.
double zero_perceptual(const Image&, const Image&);

/// Mean absolute difference, used to exercise the beta wiring in tests.
double l1_perceptual(const Image& a, const Image& b);

/// MSE over all pixels/channels + beta * perceptual.
double frame_loss(const Image& ground_truth, const Image& predicted, double beta,
                  const PerceptualMetric& perceptual = zero_perceptual);

/// (1-lambda) * (1/T) * sum_{k=0..T} L_k + lambda * sum_j gamma^j L_{T+1+j}.
/// The past list carries T+1 entries (k = 0..T) over divisor T, exactly as
/// the weighting is specified.
double trajectory_loss(const std::vector<double>& past_losses,
                       const std::vector<double>& future_losses, const LossConfig& cfg);

}  // namespace splatsim::loss
