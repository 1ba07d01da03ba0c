#include <cstring>
#include <filesystem>
#include <fstream>

#include "faultsim/cnn.hpp"
#include "faultsim/errors.hpp"
#include "faultsim/fp_ops.hpp"
#include "json.hpp"

namespace faultsim::cnn {

using nlohmann::json;
namespace fs = std::filesystem;

size_t Tensor::size() const {
    size_t n = 1;
    for (uint32_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

Tensor Tensor::zeros(std::vector<uint32_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(t.size(), 0.0f);
    return t;
}

const char* layer_kind_name(LayerSpec::Kind k) {
    switch (k) {
        case LayerSpec::Kind::Conv: return "conv";
        case LayerSpec::Kind::MaxPool: return "maxpool";
        case LayerSpec::Kind::Dense: return "dense";
        case LayerSpec::Kind::Relu: return "relu";
        case LayerSpec::Kind::Softmax: return "softmax";
    }
    return "?";
}

std::vector<uint32_t> output_shape(const LayerSpec& layer, const std::vector<uint32_t>& in) {
    auto flat = [&]() -> uint32_t {
        uint32_t n = 1;
        for (uint32_t d : in) n *= d;
        return n;
    };
    switch (layer.kind) {
        case LayerSpec::Kind::Conv: {
            if (in.size() != 3) throw UnsupportedShape("conv input must be (C,H,W)");
            const auto& p = layer.conv;
            if (p.kernel_size == 0 || p.stride == 0 || p.out_channels == 0)
                throw UnsupportedShape("conv parameters must be positive");
            uint32_t h = in[1] + 2 * p.padding, w = in[2] + 2 * p.padding;
            if (h < p.kernel_size || w < p.kernel_size)
                throw UnsupportedShape("conv kernel larger than padded input");
            return {p.out_channels, (h - p.kernel_size) / p.stride + 1,
                    (w - p.kernel_size) / p.stride + 1};
        }
        case LayerSpec::Kind::MaxPool: {
            if (in.size() != 3) throw UnsupportedShape("maxpool input must be (C,H,W)");
            const auto& p = layer.pool;
            if (p.size == 0 || p.stride == 0) throw UnsupportedShape("pool parameters must be positive");
            if (in[1] < p.size || in[2] < p.size)
                throw UnsupportedShape("pool window larger than input");
            return {in[0], (in[1] - p.size) / p.stride + 1, (in[2] - p.size) / p.stride + 1};
        }
        case LayerSpec::Kind::Dense:
            if (layer.dense.out_features == 0) throw UnsupportedShape("dense needs out_features >= 1");
            if (flat() == 0) throw UnsupportedShape("dense input is empty");
            return {layer.dense.out_features};
        case LayerSpec::Kind::Relu:
            return in;
        case LayerSpec::Kind::Softmax:
            if (in.size() != 1) throw UnsupportedShape("softmax input must be 1-D");
            return in;
    }
    throw UnsupportedShape("unknown layer kind");
}

uint32_t Model::output_length() const {
    std::vector<uint32_t> shape = input_shape;
    for (const auto& l : layers) shape = output_shape(l, shape);
    uint32_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
}

namespace {

uint32_t flat_len(const std::vector<uint32_t>& shape) {
    uint32_t n = 1;
    for (uint32_t d : shape) n *= d;
    return n;
}

// expected weight/bias element counts for a layer, given its input shape
std::pair<uint32_t, uint32_t> param_counts(const LayerSpec& layer,
                                           const std::vector<uint32_t>& in) {
    if (layer.kind == LayerSpec::Kind::Conv) {
        uint32_t k = layer.conv.kernel_size;
        return {layer.conv.out_channels * in[0] * k * k, layer.conv.out_channels};
    }
    if (layer.kind == LayerSpec::Kind::Dense)
        return {layer.dense.out_features * flat_len(in), layer.dense.out_features};
    return {0, 0};
}

std::vector<float> read_f32_blob(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open weights file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) throw FormatError("weights file not a multiple of 4 bytes");
    std::vector<float> out(bytes.size() / 4);
    for (size_t i = 0; i < out.size(); ++i) {
        uint32_t w = uint32_t(bytes[4 * i]) | uint32_t(bytes[4 * i + 1]) << 8 |
                     uint32_t(bytes[4 * i + 2]) << 16 | uint32_t(bytes[4 * i + 3]) << 24;
        out[i] = fp::from_bits(w);
    }
    return out;
}

Tensor slice_blob(const std::vector<float>& blob, uint64_t offset, uint64_t len,
                  std::vector<uint32_t> shape, int layer_idx, const char* what) {
    if (offset + len > blob.size())
        throw FormatError("layer " + std::to_string(layer_idx) + ": " + what +
                          " range exceeds weights file");
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(blob.begin() + offset, blob.begin() + offset + len);
    return t;
}

}  // namespace

Model load_model(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw FormatError("cannot open manifest: " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad manifest JSON: ") + e.what());
    }

    try {
        Model m;
        m.name = j.at("name").get<std::string>();
        m.input_shape = j.at("input_shape").get<std::vector<uint32_t>>();
        if (m.input_shape.size() != 3) throw FormatError("input_shape must be (C,H,W)");

        const auto& layers = j.at("layers");
        if (!layers.is_array() || layers.empty()) throw FormatError("layers list is empty");

        fs::path weights_path =
            fs::path(manifest_path).parent_path() / j.at("weights_file").get<std::string>();
        std::vector<float> blob = read_f32_blob(weights_path);

        std::vector<uint32_t> shape = m.input_shape;
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto& lj = layers[i];
            LayerSpec layer;
            std::string kind = lj.at("kind").get<std::string>();
            if (kind == "conv") {
                layer.kind = LayerSpec::Kind::Conv;
                layer.conv.out_channels = lj.at("out_channels").get<uint32_t>();
                layer.conv.kernel_size = lj.at("kernel_size").get<uint32_t>();
                layer.conv.stride = lj.at("stride").get<uint32_t>();
                layer.conv.padding = lj.value("padding", 0u);
            } else if (kind == "maxpool") {
                layer.kind = LayerSpec::Kind::MaxPool;
                layer.pool.size = lj.at("size").get<uint32_t>();
                layer.pool.stride = lj.at("stride").get<uint32_t>();
            } else if (kind == "dense") {
                layer.kind = LayerSpec::Kind::Dense;
                layer.dense.out_features = lj.at("out_features").get<uint32_t>();
            } else if (kind == "relu") {
                layer.kind = LayerSpec::Kind::Relu;
            } else if (kind == "softmax") {
                layer.kind = LayerSpec::Kind::Softmax;
                if (i + 1 != layers.size()) throw FormatError("softmax must be the final layer");
            } else {
                throw FormatError("unknown layer kind '" + kind + "'");
            }

            auto [want_w, want_b] = param_counts(layer, shape);
            if (want_w > 0) {
                uint64_t w_off = lj.at("weight_offset").get<uint64_t>();
                uint64_t w_len = lj.at("weight_len").get<uint64_t>();
                uint64_t b_off = lj.at("bias_offset").get<uint64_t>();
                uint64_t b_len = lj.at("bias_len").get<uint64_t>();
                if (w_len != want_w)
                    throw ShapeMismatch("layer " + std::to_string(i) + " (" + kind +
                                        "): expected " + std::to_string(want_w) +
                                        " weights, found " + std::to_string(w_len));
                if (b_len != want_b)
                    throw ShapeMismatch("layer " + std::to_string(i) + " (" + kind +
                                        "): expected " + std::to_string(want_b) +
                                        " bias values, found " + std::to_string(b_len));
                layer.weights = slice_blob(blob, w_off, w_len, {want_w}, int(i), "weight");
                layer.bias = slice_blob(blob, b_off, b_len, {want_b}, int(i), "bias");
            }
            shape = output_shape(layer, shape);
            m.layers.push_back(std::move(layer));
        }
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad manifest: ") + e.what());
    }
}

void save_model(const std::string& manifest_path, const std::string& weights_filename,
                const Model& model) {
    fs::path dir = fs::path(manifest_path).parent_path();
    std::ofstream wf(dir / weights_filename, std::ios::binary);
    if (!wf) throw Error("cannot open for write: " + (dir / weights_filename).string());

    json layers = json::array();
    uint64_t cursor = 0;
    auto emit_f32 = [&](const Tensor& t) {
        for (float f : t.data) {
            uint32_t w = fp::bits(f);
            unsigned char b[4] = {static_cast<unsigned char>(w & 0xFF),
                                  static_cast<unsigned char>((w >> 8) & 0xFF),
                                  static_cast<unsigned char>((w >> 16) & 0xFF),
                                  static_cast<unsigned char>((w >> 24) & 0xFF)};
            wf.write(reinterpret_cast<const char*>(b), 4);
        }
    };

    for (const auto& layer : model.layers) {
        json lj;
        lj["kind"] = layer_kind_name(layer.kind);
        switch (layer.kind) {
            case LayerSpec::Kind::Conv:
                lj["out_channels"] = layer.conv.out_channels;
                lj["kernel_size"] = layer.conv.kernel_size;
                lj["stride"] = layer.conv.stride;
                lj["padding"] = layer.conv.padding;
                break;
            case LayerSpec::Kind::MaxPool:
                lj["size"] = layer.pool.size;
                lj["stride"] = layer.pool.stride;
                break;
            case LayerSpec::Kind::Dense:
                lj["out_features"] = layer.dense.out_features;
                break;
            default:
                break;
        }
        if (!layer.weights.data.empty() || !layer.bias.data.empty()) {
            lj["weight_offset"] = cursor;
            lj["weight_len"] = layer.weights.data.size();
            emit_f32(layer.weights);
            cursor += layer.weights.data.size();
            lj["bias_offset"] = cursor;
            lj["bias_len"] = layer.bias.data.size();
            emit_f32(layer.bias);
            cursor += layer.bias.data.size();
        }
        layers.push_back(lj);
    }

    json j;
    j["name"] = model.name;
    j["input_shape"] = model.input_shape;
    j["weights_file"] = weights_filename;
    j["layers"] = layers;
    std::ofstream mf(manifest_path);
    if (!mf) throw Error("cannot open for write: " + manifest_path);
    mf << j.dump(2) << "\n";
}

namespace {

uint32_t read_be32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError("truncated IDX header");
    return uint32_t(b[0]) << 24 | uint32_t(b[1]) << 16 | uint32_t(b[2]) << 8 | uint32_t(b[3]);
}

void write_be32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

namespace {

Dataset load_idx_image_file(const std::string& images_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("cannot open: " + images_path);
    if (uint32_t magic = read_be32(img); magic != 0x00000803)
        throw BadMagic("images magic is not 0x00000803 in " + images_path);
    uint32_t count = read_be32(img);
    uint32_t rows = read_be32(img);
    uint32_t cols = read_be32(img);

    Dataset ds;
    std::vector<unsigned char> buf(size_t(rows) * cols);
    for (uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
        if (!img) throw FormatError("truncated image data in " + images_path);
        Tensor t;
        t.shape = {1, rows, cols};
        t.data.resize(buf.size());
        for (size_t p = 0; p < buf.size(); ++p)
            t.data[p] = static_cast<float>(buf[p]) / 255.0f;
        ds.images.push_back(std::move(t));
    }
    ds.labels.assign(count, 0);
    return ds;
}

}  // namespace

Dataset load_idx_images(const std::string& images_path) {
    return load_idx_image_file(images_path);
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    Dataset ds = load_idx_image_file(images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("cannot open: " + labels_path);
    if (uint32_t magic = read_be32(lab); magic != 0x00000801)
        throw BadMagic("labels magic is not 0x00000801 in " + labels_path);
    uint32_t label_count = read_be32(lab);
    if (label_count != ds.images.size())
        throw CountMismatch("images hold " + std::to_string(ds.images.size()) + " items, labels " +
                            std::to_string(label_count));
    ds.labels.clear();
    for (uint32_t i = 0; i < label_count; ++i) {
        unsigned char l;
        lab.read(reinterpret_cast<char*>(&l), 1);
        if (!lab) throw FormatError("truncated label data in " + labels_path);
        ds.labels.push_back(l);
    }
    return ds;
}

void save_idx(const std::string& images_path, const std::string& labels_path,
              const std::vector<std::vector<uint8_t>>& images, uint32_t rows, uint32_t cols,
              const std::vector<uint8_t>& labels) {
    if (images.size() != labels.size()) throw CountMismatch("image/label counts differ");
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw Error("cannot open for write: " + images_path);
    write_be32(img, 0x00000803);
    write_be32(img, static_cast<uint32_t>(images.size()));
    write_be32(img, rows);
    write_be32(img, cols);
    for (const auto& im : images) {
        if (im.size() != size_t(rows) * cols) throw FormatError("image pixel count mismatch");
        img.write(reinterpret_cast<const char*>(im.data()), std::streamsize(im.size()));
    }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw Error("cannot open for write: " + labels_path);
    write_be32(lab, 0x00000801);
    write_be32(lab, static_cast<uint32_t>(labels.size()));
    lab.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

// ---- sequential reference path ----

namespace {

Tensor ref_conv(const LayerSpec& layer, const Tensor& in) {
    const auto& p = layer.conv;
    auto out_sh = output_shape(layer, in.shape);
    Tensor out = Tensor::zeros(out_sh);
    uint32_t ic_n = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    uint32_t oc_n = out_sh[0], oh = out_sh[1], ow = out_sh[2];
    uint32_t k = p.kernel_size;
    for (uint32_t oc = 0; oc < oc_n; ++oc) {
        for (uint32_t oy = 0; oy < oh; ++oy) {
            for (uint32_t ox = 0; ox < ow; ++ox) {
                float acc = layer.bias.data[oc];
                for (uint32_t ic = 0; ic < ic_n; ++ic) {
                    for (uint32_t ky = 0; ky < k; ++ky) {
                        for (uint32_t kx = 0; kx < k; ++kx) {
                            int32_t iy = int32_t(oy * p.stride + ky) - int32_t(p.padding);
                            int32_t ix = int32_t(ox * p.stride + kx) - int32_t(p.padding);
                            // out-of-range taps contribute +0.0f, matching the
                            // zero-cell gather the compiled kernel performs
                            float v = 0.0f;
                            if (iy >= 0 && iy < int32_t(ih) && ix >= 0 && ix < int32_t(iw))
                                v = in.data[(ic * ih + uint32_t(iy)) * iw + uint32_t(ix)];
                            float w = layer.weights.data[((oc * ic_n + ic) * k + ky) * k + kx];
                            acc = fp::ffma(v, w, acc);
                        }
                    }
                }
                out.data[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return out;
}

Tensor ref_maxpool(const LayerSpec& layer, const Tensor& in) {
    const auto& p = layer.pool;
    auto out_sh = output_shape(layer, in.shape);
    Tensor out = Tensor::zeros(out_sh);
    uint32_t c_n = in.shape[0], ih = in.shape[1], iw = in.shape[2];
    uint32_t oh = out_sh[1], ow = out_sh[2];
    for (uint32_t c = 0; c < c_n; ++c) {
        for (uint32_t oy = 0; oy < oh; ++oy) {
            for (uint32_t ox = 0; ox < ow; ++ox) {
                float acc = 0.0f;
                bool first = true;
                for (uint32_t ky = 0; ky < p.size; ++ky) {
                    for (uint32_t kx = 0; kx < p.size; ++kx) {
                        float v = in.data[(c * ih + oy * p.stride + ky) * iw + ox * p.stride + kx];
                        acc = first ? v : fp::fmax_(acc, v);
                        first = false;
                    }
                }
                out.data[(c * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return out;
}

Tensor ref_dense(const LayerSpec& layer, const Tensor& in) {
    uint32_t of_n = layer.dense.out_features;
    uint32_t if_n = static_cast<uint32_t>(in.data.size());
    Tensor out = Tensor::zeros({of_n});
    for (uint32_t of = 0; of < of_n; ++of) {
        float acc = layer.bias.data[of];
        for (uint32_t j = 0; j < if_n; ++j)
            acc = fp::ffma(in.data[j], layer.weights.data[of * if_n + j], acc);
        out.data[of] = acc;
    }
    return out;
}

Tensor ref_relu(const Tensor& in) {
    Tensor out = in;
    for (float& v : out.data) v = fp::fmax_(v, 0.0f);
    return out;
}

Tensor ref_softmax(const Tensor& in) {
    Tensor out = in;
    size_t n = in.data.size();
    float m = in.data[0];
    for (size_t j = 1; j < n; ++j) m = fp::fmax_(m, in.data[j]);
    std::vector<float> e(n);
    for (size_t t = 0; t < n; ++t) {
        float d = fp::ffma(m, -1.0f, in.data[t]);
        e[t] = fp::fexp2(fp::fmul(d, fp::log2e()));
    }
    float sum = e[0];
    for (size_t j = 1; j < n; ++j) sum = fp::fadd(sum, e[j]);
    float r = fp::frcp(sum);
    for (size_t t = 0; t < n; ++t) out.data[t] = fp::fmul(e[t], r);
    return out;
}

}  // namespace

Tensor reference_infer(const Model& model, const Tensor& image) {
    if (image.shape != model.input_shape) throw ShapeMismatch("image shape != model input shape");
    Tensor cur = image;
    for (const auto& layer : model.layers) {
        switch (layer.kind) {
            case LayerSpec::Kind::Conv: cur = ref_conv(layer, cur); break;
            case LayerSpec::Kind::MaxPool: cur = ref_maxpool(layer, cur); break;
            case LayerSpec::Kind::Dense: {
                Tensor flat = cur;
                flat.shape = {static_cast<uint32_t>(cur.data.size())};
                cur = ref_dense(layer, flat);
                break;
            }
            case LayerSpec::Kind::Relu: cur = ref_relu(cur); break;
            case LayerSpec::Kind::Softmax: cur = ref_softmax(cur); break;
        }
    }
    return cur;
}

}  // namespace faultsim::cnn
