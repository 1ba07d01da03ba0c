#include "faultsim/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "faultsim/errors.hpp"

namespace faultsim::fixture {

namespace {

// Uniform floats in [-s, s] built from raw engine draws so fixtures are
// identical across standard libraries.
float uniform_signed(std::mt19937_64& rng, float s) {
    uint32_t u = static_cast<uint32_t>(rng() >> 40);  // 24 bits
    float unit = static_cast<float>(u) * (1.0f / 16777216.0f);
    return (2.0f * unit - 1.0f) * s;
}

cnn::Tensor random_tensor(std::mt19937_64& rng, std::vector<uint32_t> shape, uint32_t fan_in) {
    cnn::Tensor t = cnn::Tensor::zeros(std::move(shape));
    float scale = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (float& v : t.data) v = uniform_signed(rng, scale);
    return t;
}

}  // namespace

cnn::Model make_lenet_small(uint64_t seed) {
    std::mt19937_64 rng(seed);
    cnn::Model m;
    m.name = "lenet-small";
    m.input_shape = {1, 28, 28};

    cnn::LayerSpec conv1;
    conv1.kind = cnn::LayerSpec::Kind::Conv;
    conv1.conv = {4, 5, 1, 0};
    conv1.weights = random_tensor(rng, {4 * 1 * 5 * 5}, 1 * 5 * 5);
    conv1.bias = random_tensor(rng, {4}, 1 * 5 * 5);
    m.layers.push_back(std::move(conv1));

    cnn::LayerSpec relu1;
    relu1.kind = cnn::LayerSpec::Kind::Relu;
    m.layers.push_back(std::move(relu1));

    cnn::LayerSpec pool1;
    pool1.kind = cnn::LayerSpec::Kind::MaxPool;
    pool1.pool = {2, 2};
    m.layers.push_back(std::move(pool1));

    cnn::LayerSpec conv2;
    conv2.kind = cnn::LayerSpec::Kind::Conv;
    conv2.conv = {8, 5, 1, 0};
    conv2.weights = random_tensor(rng, {8 * 4 * 5 * 5}, 4 * 5 * 5);
    conv2.bias = random_tensor(rng, {8}, 4 * 5 * 5);
    m.layers.push_back(std::move(conv2));

    cnn::LayerSpec relu2;
    relu2.kind = cnn::LayerSpec::Kind::Relu;
    m.layers.push_back(std::move(relu2));

    cnn::LayerSpec pool2;
    pool2.kind = cnn::LayerSpec::Kind::MaxPool;
    pool2.pool = {2, 2};
    m.layers.push_back(std::move(pool2));

    cnn::LayerSpec dense;
    dense.kind = cnn::LayerSpec::Kind::Dense;
    dense.dense.out_features = 10;
    dense.weights = random_tensor(rng, {10 * 128}, 128);
    dense.bias = random_tensor(rng, {10}, 128);
    m.layers.push_back(std::move(dense));

    cnn::LayerSpec softmax;
    softmax.kind = cnn::LayerSpec::Kind::Softmax;
    m.layers.push_back(std::move(softmax));
    return m;
}

cnn::Model make_identity_conv(uint32_t channels, uint32_t h, uint32_t w) {
    cnn::Model m;
    m.name = "identity-conv";
    m.input_shape = {channels, h, w};
    cnn::LayerSpec conv;
    conv.kind = cnn::LayerSpec::Kind::Conv;
    conv.conv = {channels, 1, 1, 0};
    conv.weights = cnn::Tensor::zeros({channels * channels * 1 * 1});
    for (uint32_t oc = 0; oc < channels; ++oc) conv.weights.data[oc * channels + oc] = 1.0f;
    conv.bias = cnn::Tensor::zeros({channels});
    m.layers.push_back(std::move(conv));
    return m;
}

cnn::Model make_relu_net(uint32_t h, uint32_t w) {
    cnn::Model m;
    m.name = "relu-net";
    m.input_shape = {1, h, w};
    cnn::LayerSpec relu;
    relu.kind = cnn::LayerSpec::Kind::Relu;
    m.layers.push_back(std::move(relu));
    return m;
}

cnn::Model make_dense_softmax(uint32_t inputs, uint32_t classes, uint64_t seed) {
    std::mt19937_64 rng(seed);
    cnn::Model m;
    m.name = "dense-softmax";
    m.input_shape = {1, 1, inputs};
    cnn::LayerSpec dense;
    dense.kind = cnn::LayerSpec::Kind::Dense;
    dense.dense.out_features = classes;
    dense.weights = random_tensor(rng, {classes * inputs}, inputs);
    dense.bias = random_tensor(rng, {classes}, inputs);
    m.layers.push_back(std::move(dense));
    cnn::LayerSpec softmax;
    softmax.kind = cnn::LayerSpec::Kind::Softmax;
    m.layers.push_back(std::move(softmax));
    return m;
}

void write_synthetic_idx(const std::string& images_path, const std::string& labels_path,
                         uint32_t count, uint32_t rows, uint32_t cols, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::vector<uint8_t>> images;
    std::vector<uint8_t> labels;
    for (uint32_t i = 0; i < count; ++i) {
        // a handful of soft blobs per image
        std::vector<float> acc(size_t(rows) * cols, 0.0f);
        uint32_t blobs = 2 + static_cast<uint32_t>(rng() % 3);
        for (uint32_t bidx = 0; bidx < blobs; ++bidx) {
            float cy = static_cast<float>(rng() % rows);
            float cx = static_cast<float>(rng() % cols);
            float amp = 120.0f + static_cast<float>(rng() % 120);
            float sigma = 2.0f + static_cast<float>(rng() % 40) / 10.0f;
            for (uint32_t y = 0; y < rows; ++y) {
                for (uint32_t x = 0; x < cols; ++x) {
                    float dy = (float(y) - cy) / sigma, dx = (float(x) - cx) / sigma;
                    acc[y * cols + x] += amp * std::exp(-(dy * dy + dx * dx));
                }
            }
        }
        std::vector<uint8_t> img(acc.size());
        for (size_t p = 0; p < acc.size(); ++p)
            img[p] = static_cast<uint8_t>(std::min(255.0f, std::max(0.0f, acc[p])));
        images.push_back(std::move(img));
        labels.push_back(static_cast<uint8_t>(rng() % 10));
    }
    cnn::save_idx(images_path, labels_path, images, rows, cols, labels);
}

FixturePaths write_fixtures(const std::string& dir, uint64_t seed, uint32_t image_count) {
    std::filesystem::create_directories(dir);
    FixturePaths p;
    p.manifest = dir + "/lenet-small.json";
    p.weights = dir + "/lenet-small.weights";
    p.images = dir + "/images.idx";
    p.labels = dir + "/labels.idx";
    cnn::save_model(p.manifest, "lenet-small.weights", make_lenet_small(seed));
    write_synthetic_idx(p.images, p.labels, image_count, 28, 28, seed + 1);
    return p;
}

}  // namespace faultsim::fixture
