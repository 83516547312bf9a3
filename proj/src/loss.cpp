// Copyright (c) splatsim contributors
// SPDX-License-Identifier: Apache-2.0

#include "splatsim/loss.hpp"

#include <cmath>
#include <string>

namespace splatsim::loss {

double zero_perceptual(const Image&, const Image&) { return 0.0; }

double l1_perceptual(const Image& a, const Image& b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) sum += std::abs(a.data[i] - b.data[i]);
    return sum / static_cast<double>(a.data.size());
}

double frame_loss(const Image& ground_truth, const Image& predicted, double beta,
                  const PerceptualMetric& perceptual) {
    if (!ground_truth.same_shape(predicted)) {
        throw ShapeMismatch("frame_loss: image shapes differ");
    }
    double mse = 0.0;
    for (std::size_t i = 0; i < ground_truth.data.size(); ++i) {
        const double d = ground_truth.data[i] - predicted.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(ground_truth.data.size());
    return mse + beta * perceptual(ground_truth, predicted);
}

double trajectory_loss(const std::vector<double>& past_losses,
                       const std::vector<double>& future_losses, const LossConfig& cfg) {
    if (static_cast<int>(past_losses.size()) != cfg.past_length + 1) {
        throw LengthMismatch("trajectory_loss: expected " + std::to_string(cfg.past_length + 1) +
                             " past losses (k = 0..T), got " +
                             std::to_string(past_losses.size()));
    }
    if (static_cast<int>(future_losses.size()) != cfg.future_length) {
        throw LengthMismatch("trajectory_loss: expected " + std::to_string(cfg.future_length) +
                             " future losses, got " + std::to_string(future_losses.size()));
    }

    double past = 0.0;
    for (double lk : past_losses) past += lk;
    past /= static_cast<double>(cfg.past_length);

    double future = 0.0;
    double decay = 1.0;
    for (double lk : future_losses) {
        future += decay * lk;
        decay *= cfg.gamma;
    }
    return (1.0 - cfg.lambda) * past + cfg.lambda * future;
}

}  // namespace splatsim::loss
