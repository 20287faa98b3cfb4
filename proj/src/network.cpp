#include "batchverify/network.hpp"

#include "batchverify/error.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace batchverify {

using nlohmann::json;

namespace {

void check_finite(const Layer &layer, std::size_t index)
{
    if (!layer.weights.allFinite() || !layer.bias.allFinite())
        throw ParseError("layer " + std::to_string(index + 1) + ": non-finite weight or bias");
}

} // namespace

Network::Network(std::size_t input_dim, std::vector<Layer> layers)
    : input_dim_(input_dim)
    , layers_(std::move(layers))
{
    if (input_dim_ == 0)
        throw DimensionError("network input dimension must be positive");
    if (layers_.empty())
        throw DimensionError("network needs at least one layer");

    std::size_t previous = input_dim_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const Layer &layer = layers_[i];
        if (layer.input_size() != previous)
            throw DimensionError("layer " + std::to_string(i + 1) + " expects " +
                                 std::to_string(layer.input_size()) + " inputs but receives " +
                                 std::to_string(previous));
        if (static_cast<std::size_t>(layer.bias.size()) != layer.output_size())
            throw DimensionError("layer " + std::to_string(i + 1) + ": bias length " +
                                 std::to_string(layer.bias.size()) + " != row count " +
                                 std::to_string(layer.output_size()));
        if (layer.output_size() == 0)
            throw DimensionError("layer " + std::to_string(i + 1) + " has no neurons");
        check_finite(layer, i);
        const bool is_last = i + 1 == layers_.size();
        if (is_last && layer.has_relu)
            throw ParseError("the output layer must not apply ReLU");
        if (!is_last && !layer.has_relu)
            throw ParseError("hidden layer " + std::to_string(i + 1) + " must apply ReLU");
        previous = layer.output_size();
    }
    if (output_dim() < 2)
        throw DimensionError("classifier needs at least two classes");
}

std::size_t Network::relu_count() const
{
    std::size_t count = 0;
    for (const Layer &layer : layers_)
        if (layer.has_relu)
            count += layer.output_size();
    return count;
}

std::optional<std::size_t> Network::last_convolution_layer() const
{
    std::optional<std::size_t> last;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].from_convolution)
            last = i + 1;
    return last;
}

Trace Network::forward(const Eigen::VectorXd &x) const
{
    if (static_cast<std::size_t>(x.size()) != input_dim_)
        throw DimensionError("input has " + std::to_string(x.size()) + " entries, network expects " +
                             std::to_string(input_dim_));
    Trace trace;
    trace.pre.reserve(layers_.size());
    trace.post.reserve(layers_.size());
    const Eigen::VectorXd *current = &x;
    for (const Layer &layer : layers_) {
        Eigen::VectorXd pre = layer.weights * *current + layer.bias;
        Eigen::VectorXd post = layer.has_relu ? Eigen::VectorXd(pre.cwiseMax(0.0)) : pre;
        trace.pre.push_back(std::move(pre));
        trace.post.push_back(std::move(post));
        current = &trace.post.back();
    }
    return trace;
}

Eigen::VectorXd Network::scores(const Eigen::VectorXd &x) const
{
    return forward(x).scores();
}

std::size_t argmax(const Eigen::VectorXd &scores)
{
    std::size_t best = 0;
    for (Eigen::Index i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[static_cast<Eigen::Index>(best)])
            best = static_cast<std::size_t>(i);
    return best;
}

std::size_t Network::classify(const Eigen::VectorXd &x) const
{
    return argmax(scores(x));
}

ActivationPattern Network::activation_pattern(const Eigen::VectorXd &x) const
{
    Trace trace = forward(x);
    ActivationPattern pattern;
    pattern.bits.reserve(relu_count());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (!layers_[i].has_relu)
            continue;
        for (Eigen::Index m = 0; m < trace.pre[i].size(); ++m)
            pattern.bits.push_back(trace.pre[i][m] > 0.0);
    }
    return pattern;
}

// Convolution lowering

std::size_t ConvolutionShape::out_height() const
{
    return (in_height + 2 * padding - kernel_height) / stride + 1;
}

std::size_t ConvolutionShape::out_width() const
{
    return (in_width + 2 * padding - kernel_width) / stride + 1;
}

Layer lower_convolution(const ConvolutionShape &s,
                        const std::vector<double> &kernel,
                        const std::vector<double> &bias,
                        bool relu)
{
    if (s.stride == 0 || s.kernel_height == 0 || s.kernel_width == 0 || s.in_channels == 0 ||
        s.out_channels == 0)
        throw ParseError("convolution: stride, kernel and channel counts must be positive");
    if (s.kernel_height > s.in_height + 2 * s.padding || s.kernel_width > s.in_width + 2 * s.padding)
        throw DimensionError("convolution: kernel larger than padded input");
    const std::size_t kernel_size = s.out_channels * s.in_channels * s.kernel_height * s.kernel_width;
    if (kernel.size() != kernel_size)
        throw DimensionError("convolution: expected " + std::to_string(kernel_size) +
                             " kernel weights, got " + std::to_string(kernel.size()));
    if (bias.size() != s.out_channels)
        throw DimensionError("convolution: bias length must equal out_channels");

    const std::size_t oh = s.out_height();
    const std::size_t ow = s.out_width();
    const std::size_t rows = s.out_channels * oh * ow;
    const std::size_t cols = s.in_channels * s.in_height * s.in_width;

    Layer layer;
    layer.weights = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    layer.bias = Eigen::VectorXd(static_cast<Eigen::Index>(rows));
    layer.has_relu = relu;
    layer.from_convolution = true;

    for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const auto row = static_cast<Eigen::Index>((oc * oh + y) * ow + x);
                layer.bias[row] = bias[oc];
                for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
                    for (std::size_t ky = 0; ky < s.kernel_height; ++ky) {
                        for (std::size_t kx = 0; kx < s.kernel_width; ++kx) {
                            // Padded coordinates; taps falling into the zero padding vanish.
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * s.stride + ky) -
                                                      static_cast<std::ptrdiff_t>(s.padding);
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * s.stride + kx) -
                                                      static_cast<std::ptrdiff_t>(s.padding);
                            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.in_height) ||
                                ix >= static_cast<std::ptrdiff_t>(s.in_width))
                                continue;
                            const auto col = static_cast<Eigen::Index>(
                                (ic * s.in_height + static_cast<std::size_t>(iy)) * s.in_width +
                                static_cast<std::size_t>(ix));
                            const std::size_t k =
                                ((oc * s.in_channels + ic) * s.kernel_height + ky) * s.kernel_width + kx;
                            layer.weights(row, col) += kernel[k];
                        }
                    }
                }
            }
        }
    }
    return layer;
}

// JSON loading

namespace {

double finite_number(const json &value, const std::string &where)
{
    if (!value.is_number())
        throw ParseError(where + ": expected a number");
    const double v = value.get<double>();
    if (!std::isfinite(v))
        throw ParseError(where + ": non-finite value");
    return v;
}

std::size_t positive_size(const json &layer, const char *key, std::size_t index, std::size_t fallback = 0)
{
    if (!layer.contains(key)) {
        if (fallback > 0)
            return fallback;
        throw ParseError("layer " + std::to_string(index + 1) + ": missing \"" + key + "\"");
    }
    const json &v = layer.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ParseError("layer " + std::to_string(index + 1) + ": \"" + key +
                         "\" must be a non-negative integer");
    return v.get<std::size_t>();
}

void flatten_numbers(const json &value, std::vector<double> &out, const std::string &where)
{
    if (value.is_array()) {
        for (const json &item : value)
            flatten_numbers(item, out, where);
    } else {
        out.push_back(finite_number(value, where));
    }
}

bool relu_flag(const json &layer, std::size_t index)
{
    if (!layer.contains("relu") || !layer.at("relu").is_boolean())
        throw ParseError("layer " + std::to_string(index + 1) + ": missing boolean \"relu\"");
    return layer.at("relu").get<bool>();
}

std::vector<double> bias_vector(const json &layer, std::size_t index)
{
    const std::string where = "layer " + std::to_string(index + 1) + " bias";
    if (!layer.contains("bias") || !layer.at("bias").is_array())
        throw ParseError(where + ": missing array");
    std::vector<double> bias;
    for (const json &v : layer.at("bias"))
        bias.push_back(finite_number(v, where));
    return bias;
}

Layer parse_dense(const json &layer, std::size_t index, std::size_t expected_cols)
{
    const std::string where = "layer " + std::to_string(index + 1);
    if (!layer.contains("weights") || !layer.at("weights").is_array())
        throw ParseError(where + ": missing \"weights\" matrix");
    const json &rows = layer.at("weights");
    const std::vector<double> bias = bias_vector(layer, index);
    if (rows.size() != bias.size())
        throw DimensionError(where + ": " + std::to_string(rows.size()) + " weight rows but " +
                             std::to_string(bias.size()) + " biases");

    Layer out;
    out.has_relu = relu_flag(layer, index);
    out.weights.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(expected_cols));
    out.bias.resize(static_cast<Eigen::Index>(bias.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const json &row = rows[r];
        if (!row.is_array())
            throw ParseError(where + ": weight row " + std::to_string(r) + " is not an array");
        if (row.size() != expected_cols)
            throw DimensionError(where + ": weight row " + std::to_string(r) + " has " +
                                 std::to_string(row.size()) + " columns, expected " +
                                 std::to_string(expected_cols));
        for (std::size_t c = 0; c < expected_cols; ++c)
            out.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                finite_number(row[c], where + " weights");
        out.bias[static_cast<Eigen::Index>(r)] = bias[r];
    }
    return out;
}

Layer parse_convolution(const json &layer, std::size_t index, std::size_t expected_cols)
{
    ConvolutionShape shape;
    shape.in_channels = positive_size(layer, "in_channels", index);
    shape.in_height = positive_size(layer, "in_height", index);
    shape.in_width = positive_size(layer, "in_width", index);
    shape.out_channels = positive_size(layer, "out_channels", index);
    shape.kernel_height = positive_size(layer, "kernel_height", index);
    shape.kernel_width = positive_size(layer, "kernel_width", index);
    shape.stride = positive_size(layer, "stride", index, 1);
    shape.padding = layer.contains("padding") ? positive_size(layer, "padding", index) : 0;

    const std::size_t in_size = shape.in_channels * shape.in_height * shape.in_width;
    if (in_size != expected_cols)
        throw DimensionError("layer " + std::to_string(index + 1) + ": convolution input size " +
                             std::to_string(in_size) + " != previous output " +
                             std::to_string(expected_cols));
    std::vector<double> kernel;
    if (!layer.contains("weights"))
        throw ParseError("layer " + std::to_string(index + 1) + ": missing \"weights\"");
    flatten_numbers(layer.at("weights"), kernel, "layer " + std::to_string(index + 1) + " weights");
    return lower_convolution(shape, kernel, bias_vector(layer, index), relu_flag(layer, index));
}

} // namespace

Network load_network(std::istream &in)
{
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error &e) {
        throw ParseError(std::string("network JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("input_dim") || !doc.at("input_dim").is_number_integer())
        throw ParseError("network JSON: missing integer \"input_dim\"");
    if (doc.at("input_dim").get<long long>() <= 0)
        throw ParseError("network JSON: \"input_dim\" must be positive");
    if (!doc.contains("layers") || !doc.at("layers").is_array() || doc.at("layers").empty())
        throw ParseError("network JSON: missing non-empty \"layers\" array");

    const auto input_dim = doc.at("input_dim").get<std::size_t>();
    std::vector<Layer> layers;
    std::size_t previous = input_dim;
    const json &items = doc.at("layers");
    for (std::size_t i = 0; i < items.size(); ++i) {
        const json &item = items[i];
        if (!item.is_object())
            throw ParseError("layer " + std::to_string(i + 1) + " is not an object");
        const std::string type = item.value("type", std::string("dense"));
        Layer layer;
        if (type == "dense") {
            layer = parse_dense(item, i, previous);
            layer.from_convolution = item.value("lowered_convolution", false);
        }
        else if (type == "conv" || type == "convolution")
            layer = parse_convolution(item, i, previous);
        else if (type == "maxpool" || type == "max_pool")
            throw ParseError("layer " + std::to_string(i + 1) + ": max-pooling layers are not supported");
        else
            throw ParseError("layer " + std::to_string(i + 1) + ": unknown layer type \"" + type + "\"");
        previous = layer.output_size();
        layers.push_back(std::move(layer));
    }
    return Network(input_dim, std::move(layers));
}

Network load_network_file(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open network file " + path);
    return load_network(in);
}

std::string network_to_json(const Network &net)
{
    json doc;
    doc["input_dim"] = net.input_dim();
    json layers = json::array();
    for (const Layer &layer : net.layers()) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c)
                row.push_back(layer.weights(r, c));
            rows.push_back(std::move(row));
        }
        json bias = json::array();
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r)
            bias.push_back(layer.bias[r]);
        json entry = {{"weights", rows}, {"bias", bias}, {"relu", layer.has_relu}};
        if (layer.from_convolution)
            entry["lowered_convolution"] = true;
        layers.push_back(std::move(entry));
    }
    doc["layers"] = std::move(layers);
    return doc.dump();
}

} // namespace batchverify
