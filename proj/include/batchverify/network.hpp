#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace batchverify {

/// One affine layer, optionally followed by a ReLU.
struct Layer {
    Eigen::MatrixXd weights;   // rows = outputs, cols = inputs
    Eigen::VectorXd bias;
    bool has_relu = false;
    bool from_convolution = false;  // set when lowered from a conv description

    std::size_t input_size() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t output_size() const { return static_cast<std::size_t>(weights.rows()); }
};

/// Boolean vector with one bit per ReLU, ordered layer-major.
struct ActivationPattern {
    std::vector<bool> bits;

    std::size_t size() const { return bits.size(); }
    bool operator==(const ActivationPattern &) const = default;
};

/// Per-layer values of one feed-forward pass. `pre[i]` and `post[i]` belong to
/// layer i (0-based); for the output layer they coincide.
struct Trace {
    std::vector<Eigen::VectorXd> pre;
    std::vector<Eigen::VectorXd> post;

    const Eigen::VectorXd &scores() const { return post.back(); }
};

/// A feed-forward ReLU classifier. Immutable once constructed.
class Network {
public:
    /// Validates shapes, finiteness, the ReLU layout and d_out >= 2.
    Network(std::size_t input_dim, std::vector<Layer> layers);

    std::size_t input_dim() const { return input_dim_; }
    std::size_t output_dim() const { return layers_.back().output_size(); }
    std::size_t layer_count() const { return layers_.size(); }
    std::size_t relu_count() const;

    const Layer &layer(std::size_t index) const { return layers_.at(index); }
    const std::vector<Layer> &layers() const { return layers_; }

    /// 1-based index of the last layer lowered from a convolution, if any.
    std::optional<std::size_t> last_convolution_layer() const;

    Trace forward(const Eigen::VectorXd &x) const;
    Eigen::VectorXd scores(const Eigen::VectorXd &x) const;

    /// Argmax of the scores; ties go to the lowest class index.
    std::size_t classify(const Eigen::VectorXd &x) const;

    /// Bit j is set iff the j-th ReLU's pre-activation is strictly positive.
    ActivationPattern activation_pattern(const Eigen::VectorXd &x) const;

private:
    std::size_t input_dim_;
    std::vector<Layer> layers_;
};

/// Argmax with lowest-index tie breaking.
std::size_t argmax(const Eigen::VectorXd &scores);

/// Parses the JSON network document. Convolution layers are lowered to dense
/// affine layers; max-pooling is rejected.
Network load_network(std::istream &in);
Network load_network_file(const std::string &path);

/// Serialises a dense network back to the JSON document format.
std::string network_to_json(const Network &net);

/// Dense matrix equivalent of a 2-D convolution over a CHW input.
struct ConvolutionShape {
    std::size_t in_channels = 1;
    std::size_t in_height = 1;
    std::size_t in_width = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_height = 1;
    std::size_t kernel_width = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t out_height() const;
    std::size_t out_width() const;
};

/// `kernel` is indexed [out_c][in_c][kh][kw], flattened row-major.
Layer lower_convolution(const ConvolutionShape &shape,
                        const std::vector<double> &kernel,
                        const std::vector<double> &bias,
                        bool relu);

} // namespace batchverify
