#pragma once

#include <cstdint>
#include <string>

#include "faultsim/cnn.hpp"

// Deterministic fixtures: a LeNet-scale model with seeded random weights and a
// small synthetic IDX image set. Classification accuracy is irrelevant here;
// campaigns only compare faulty inference against the golden run.

namespace faultsim::fixture {

// Conv 1->4 k5, Relu, MaxPool 2/2, Conv 4->8 k5, Relu, MaxPool 2/2,
// Dense 10, Softmax, over 1x28x28 inputs.
cnn::Model make_lenet_small(uint64_t seed);

// Tiny single-layer models used to widen oracle coverage in tests.
cnn::Model make_identity_conv(uint32_t channels, uint32_t h, uint32_t w);
cnn::Model make_relu_net(uint32_t h, uint32_t w);
cnn::Model make_dense_softmax(uint32_t inputs, uint32_t classes, uint64_t seed);

struct FixturePaths {
    std::string manifest;
    std::string weights;
    std::string images;
    std::string labels;
};

// Writes lenet-small plus a synthetic 28x28 dataset under dir.
FixturePaths write_fixtures(const std::string& dir, uint64_t seed, uint32_t image_count);

// Synthetic blobby grayscale images, deterministic in seed.
void write_synthetic_idx(const std::string& images_path, const std::string& labels_path,
                         uint32_t count, uint32_t rows, uint32_t cols, uint64_t seed);

}  // namespace faultsim::fixture
