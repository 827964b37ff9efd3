#include "rewindlab/models.hpp"

#include <stdexcept>

namespace rewindlab {

namespace {

// Original (post-activation) CIFAR ResNet, depth 6n+2 with stage widths
// 16/32/64. Dimension-changing blocks use a 1x1 projection shortcut with
// no batch norm and no bias; that variant makes the parameter counts come
// out right.
ModelSpec make_resnet(const std::string& name, int n_blocks, int classes, double bn_decay) {
    ModelBuilder b;
    std::string x = b.input({32, 32, 3});
    x = b.conv("conv1", x, 3, 3, 16, 1);
    x = b.batchnorm("conv1/bn", x, 16, bn_decay);
    x = b.relu("conv1/relu", x);

    const int widths[3] = {16, 32, 64};
    int in_ch = 16;
    for (int stage = 0; stage < 3; ++stage) {
        const int out_ch = widths[stage];
        for (int block = 0; block < n_blocks; ++block) {
            const int stride = (stage > 0 && block == 0) ? 2 : 1;
            const std::string base = "stage" + std::to_string(stage + 1) + "/block" + std::to_string(block + 1);
            std::string shortcut = x;
            if (stride != 1 || in_ch != out_ch) {
                shortcut = b.conv(base + "/shortcut", x, 1, in_ch, out_ch, stride);
            }
            std::string y = b.conv(base + "/conv1", x, 3, in_ch, out_ch, stride);
            y = b.batchnorm(base + "/bn1", y, out_ch, bn_decay);
            y = b.relu(base + "/relu1", y);
            y = b.conv(base + "/conv2", y, 3, out_ch, out_ch, 1);
            y = b.batchnorm(base + "/bn2", y, out_ch, bn_decay);
            y = b.add(base + "/add", y, shortcut);
            x = b.relu(base + "/relu2", y);
            in_ch = out_ch;
        }
    }
    x = b.global_avg_pool("pool", x);
    x = b.dense("fc", x, 64, classes);
    return b.finish(name, classes, x);
}

// WRN-16-8: preactivated blocks (BN-ReLU-conv), widths 128/256/512, two
// blocks per group, final BN-ReLU before pooling. Projection shortcuts
// consume the preactivated input.
ModelSpec make_wrn_16_8(int classes, double bn_decay) {
    ModelBuilder b;
    std::string x = b.input({32, 32, 3});
    x = b.conv("conv1", x, 3, 3, 16, 1);

    const int widths[3] = {128, 256, 512};
    int in_ch = 16;
    for (int group = 0; group < 3; ++group) {
        const int out_ch = widths[group];
        for (int block = 0; block < 2; ++block) {
            const int stride = (group > 0 && block == 0) ? 2 : 1;
            const std::string base = "group" + std::to_string(group + 1) + "/block" + std::to_string(block + 1);
            std::string pre = b.batchnorm(base + "/bn1", x, in_ch, bn_decay);
            pre = b.relu(base + "/relu1", pre);
            std::string shortcut = (stride != 1 || in_ch != out_ch)
                                       ? b.conv(base + "/shortcut", pre, 1, in_ch, out_ch, stride)
                                       : x;
            std::string y = b.conv(base + "/conv1", pre, 3, in_ch, out_ch, stride);
            y = b.batchnorm(base + "/bn2", y, out_ch, bn_decay);
            y = b.relu(base + "/relu2", y);
            y = b.conv(base + "/conv2", y, 3, out_ch, out_ch, 1);
            x = b.add(base + "/add", y, shortcut);
            in_ch = out_ch;
        }
    }
    x = b.batchnorm("final/bn", x, 512, bn_decay);
    x = b.relu("final/relu", x);
    x = b.global_avg_pool("pool", x);
    x = b.dense("fc", x, 512, classes);
    return b.finish("wrn16-8", classes, x);
}

// Desk-scale CNN, ~41k kernel parameters on 32x32x3 inputs.
ModelSpec make_cnn_small(int classes, double bn_decay) {
    ModelBuilder b;
    std::string x = b.input({32, 32, 3});
    struct Stage {
        int out_ch, stride;
    };
    const Stage stages[4] = {{8, 2}, {24, 2}, {48, 2}, {64, 1}};
    int in_ch = 3;
    for (int i = 0; i < 4; ++i) {
        const std::string base = "conv" + std::to_string(i + 1);
        x = b.conv(base, x, 3, in_ch, stages[i].out_ch, stages[i].stride);
        x = b.batchnorm(base + "/bn", x, stages[i].out_ch, bn_decay);
        x = b.relu(base + "/relu", x);
        in_ch = stages[i].out_ch;
    }
    x = b.global_avg_pool("pool", x);
    x = b.dense("fc", x, 64, classes);
    return b.finish("cnn-small", classes, x);
}

}  // namespace

ModelSpec make_mlp(const std::string& name, const Shape& input_hwc, const std::vector<int>& hidden,
                   int classes) {
    ModelBuilder b;
    std::string x = b.input(input_hwc);
    x = b.flatten("flatten", x);
    int in_dim = static_cast<int>(shape_numel(input_hwc));
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        const std::string base = "fc" + std::to_string(i + 1);
        x = b.dense(base, x, in_dim, hidden[i]);
        x = b.relu(base + "/relu", x);
        in_dim = hidden[i];
    }
    x = b.dense("fc_out", x, in_dim, classes);
    return b.finish(name, classes, x);
}

std::vector<std::string> model_zoo() {
    return {"resnet20", "resnet56", "resnet110", "wrn16-8", "mlp-small", "cnn-small"};
}

ModelSpec make_model_spec(const std::string& name, int classes, double bn_decay) {
    if (name == "resnet20") return make_resnet(name, 3, classes, bn_decay);
    if (name == "resnet56") return make_resnet(name, 9, classes, bn_decay);
    if (name == "resnet110") return make_resnet(name, 18, classes, bn_decay);
    if (name == "wrn16-8") return make_wrn_16_8(classes, bn_decay);
    if (name == "cnn-small") return make_cnn_small(classes, bn_decay);
    if (name == "mlp-small") return make_mlp("mlp-small", {32, 32, 3}, {16}, classes);
    std::string zoo;
    for (const auto& z : model_zoo()) zoo += (zoo.empty() ? "" : ", ") + z;
    throw std::invalid_argument("unknown model '" + name + "'; available: " + zoo);
}

Model build(const std::string& name, int classes, std::uint64_t seed, double bn_decay) {
    Model m;
    m.spec = make_model_spec(name, classes, bn_decay);
    m.weights = init_weights(m.spec, seed);
    return m;
}

}  // namespace rewindlab
