#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "faultsim/isa.hpp"
#include "faultsim/simt.hpp"

// CNN front end: model/dataset loading, layer-to-kernel compilation, the
// simulated inference path, and the sequential reference path used as the
// bit-exact oracle. Generated kernels are straight-line (loop bodies fully
// unrolled, per-element indices precomputed into tables) so warps never
// diverge; predication handles the padded tail threads of a grid.

namespace faultsim::cnn {

struct Tensor {
    std::vector<uint32_t> shape;  // (C,H,W) or (len,)
    std::vector<float> data;      // row-major, channel-outermost

    size_t size() const;
    static Tensor zeros(std::vector<uint32_t> shape);
};

struct ConvParams {
    uint32_t out_channels = 1;
    uint32_t kernel_size = 1;
    uint32_t stride = 1;
    uint32_t padding = 0;
};
struct PoolParams {
    uint32_t size = 2;
    uint32_t stride = 2;
};
struct DenseParams {
    uint32_t out_features = 1;
};

struct LayerSpec {
    enum class Kind : uint8_t { Conv, MaxPool, Dense, Relu, Softmax };
    Kind kind = Kind::Relu;
    ConvParams conv{};
    PoolParams pool{};
    DenseParams dense{};
    Tensor weights;  // Conv: (OC*C*k*k,), Dense: (OF*IF,)
    Tensor bias;     // Conv: (OC,), Dense: (OF,)
};
const char* layer_kind_name(LayerSpec::Kind k);

// Output shape of one layer; throws UnsupportedShape.
std::vector<uint32_t> output_shape(const LayerSpec& layer, const std::vector<uint32_t>& in);

struct Model {
    std::string name;
    std::vector<uint32_t> input_shape;  // (C,H,W)
    std::vector<LayerSpec> layers;

    // class count; throws if the shape chain is inconsistent
    uint32_t output_length() const;
};

// Manifest JSON + raw little-endian binary32 weight blob.
Model load_model(const std::string& manifest_path);
void save_model(const std::string& manifest_path, const std::string& weights_filename,
                const Model& model);

struct Dataset {
    std::vector<Tensor> images;  // pixels scaled into [0,1]
    std::vector<uint32_t> labels;
};

// IDX file pair (big-endian headers, magic 0x803 images / 0x801 labels).
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Images only; labels come back zeroed.
Dataset load_idx_images(const std::string& images_path);
void save_idx(const std::string& images_path, const std::string& labels_path,
              const std::vector<std::vector<uint8_t>>& images, uint32_t rows, uint32_t cols,
              const std::vector<uint8_t>& labels);

// ---- compilation ----

struct Segment {
    std::string name;
    uint32_t base = 0;   // byte address, word-aligned
    uint32_t words = 0;  // 32-bit words
};

struct LayerLayout {
    Segment input;
    Segment output;
    std::vector<Segment> constants;  // tables, weights, scratch
};

struct CompiledKernel {
    isa::Kernel kernel;
    simt::LaunchConfig launch;
};

struct CompiledLayer {
    std::vector<CompiledKernel> kernels;  // 1, or 2 for softmax / padded conv
    LayerLayout layout;
    // words to preload at byte addresses (weights, index tables, constants)
    std::vector<std::pair<uint32_t, std::vector<uint32_t>>> const_data;
};

// Word-aligned bump allocator over the simulated global memory.
class MemArena {
  public:
    explicit MemArena(uint32_t base_byte = 0) : cursor_(base_byte) {}
    uint32_t alloc_words(uint32_t words);
    uint32_t cursor() const { return cursor_; }

  private:
    uint32_t cursor_;
};

// Compiles one layer: input tensor expected at in_base, result at out_base,
// constants allocated from the arena. Register use stays within R0..R9.
CompiledLayer compile_layer(const LayerSpec& layer, const std::vector<uint32_t>& input_shape,
                            uint32_t in_base, uint32_t out_base, MemArena& arena);

// Standalone form: input at byte 0, output right after, constants following.
CompiledLayer compile_layer(const LayerSpec& layer, const std::vector<uint32_t>& input_shape);

struct CompiledModel {
    std::string model_name;
    std::vector<CompiledKernel> launches;  // layer order
    simt::MemoryImage initial_memory;      // constants preloaded, zero elsewhere
    uint32_t input_base = 0;
    uint32_t input_words = 0;
    uint32_t output_base = 0;
    uint32_t output_words = 0;
};

CompiledModel compile_model(const Model& model, const simt::DeviceConfig& device);

struct InferStats {
    simt::ExecStats exec;                    // accumulated over kernels
    std::vector<uint64_t> per_kernel_instrs; // one entry per launch
};

using InferOutcome = std::variant<Tensor, simt::Trap>;

// Runs all kernels on one persistent memory image; the same hook is installed
// for every kernel. A trap surfaces as the outcome.
InferOutcome infer(const CompiledModel& compiled, const Tensor& image,
                   const simt::DeviceConfig& device, simt::WriteHook* hook = nullptr,
                   InferStats* stats = nullptr);

// Convenience: compile + run.
InferOutcome infer(const Model& model, const Tensor& image, const simt::DeviceConfig& device,
                   simt::WriteHook* hook = nullptr);

// Sequential oracle: same operation order and rounding contract as the
// compiled kernels, no simulator involved.
Tensor reference_infer(const Model& model, const Tensor& image);

}  // namespace faultsim::cnn
