#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rewindlab/model_spec.hpp"
#include "rewindlab/tensor.hpp"

namespace rewindlab {

/// Binary keep-masks over the prunable (kernel) tensors. A 1 keeps the
/// weight, a 0 prunes it. Once pruned, a position never comes back within
/// a lineage; the composition entry points below enforce that.
struct PruneMask {
    struct Entry {
        std::string name;
        Shape shape;
        std::vector<std::uint8_t> keep;
    };
    std::vector<Entry> entries;  // prunable tensors, declaration order
    double target_sparsity = 0.0;
    std::int64_t nonzero = 0;  // achieved surviving count
    std::int64_t total = 0;    // kernel parameter count

    const Entry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
    void recount() {
        total = 0;
        nonzero = 0;
        for (const auto& e : entries) {
            total += static_cast<std::int64_t>(e.keep.size());
            for (auto k : e.keep) nonzero += k ? 1 : 0;
        }
    }
};

struct PrunableView {
    std::string name;
    const Tensor* tensor;
};

std::vector<PrunableView> prunable_view(const ModelSpec& spec, const ParamStore& weights);

/// All-ones mask over the prunable tensors.
PruneMask full_mask(const ModelSpec& spec);

enum class PruneScope { global, per_layer };

/// Magnitude pruning of individual weights. Under global scope exactly
/// floor(s * kernel_count) positions end up masked; ties break by
/// (tensor index, flat position) ascending. Previously masked positions
/// stay masked.
PruneMask prune_unstructured(const std::vector<PrunableView>& weights, double target_sparsity,
                             PruneScope scope = PruneScope::global, const PruneMask* existing = nullptr);

/// Same criterion, but the total number of masked positions is given
/// directly. Global scope only; used when targets arrive as compression
/// ratios resolved to survivor counts.
PruneMask prune_unstructured_to_count(const std::vector<PrunableView>& weights,
                                      std::int64_t target_masked, const PruneMask* existing = nullptr);

/// Structured magnitude pruning: whole structures (rows of dense kernels,
/// output channels of conv kernels) ranked by mean |w|, masked until the
/// weight sparsity reaches the target with minimal overshoot.
PruneMask prune_structured(const std::vector<PrunableView>& weights, double target_sparsity,
                           const PruneMask* existing = nullptr);

/// Zero every masked position, leave survivors untouched. Idempotent.
void apply_mask(ParamStore& weights, const PruneMask& mask);
void apply_mask(Tensor& tensor, const PruneMask::Entry& entry);

double sparsity_of(const PruneMask& mask);

struct CompressionRatio {
    double value = 1.0;
};

/// kernel_count / nonzero_kernel_count; throws if everything is masked.
CompressionRatio compression_of(const PruneMask& mask);

/// Surviving-parameter target for a compression ratio: floor(kernel / c).
std::int64_t survivors_for_compression(std::int64_t kernel_count, double compression);

/// Sparsity after k rounds of iterative pruning with step fraction p.
double iterative_sparsity(double step_fraction, int rounds);

/// True if every position surviving in `later` also survives in `earlier`.
bool mask_is_subset(const PruneMask& later, const PruneMask& earlier);

/// Excludes tensors whose name starts with any of the given prefixes
/// (e.g. exempting the first convolution or the final dense layer).
std::vector<PrunableView> filter_exempt(std::vector<PrunableView> view,
                                        const std::vector<std::string>& exempt_prefixes);

/// FNV-1a over names, shapes, and keep bits; identifies a mask exactly.
std::uint64_t mask_checksum(const PruneMask& mask);

// Mask container format, magic "RWLM": per-tensor name, shape, and a
// bit-packed keep mask (LSB-first within each byte, flat row-major order).
void save_mask(const PruneMask& mask, const std::string& path);
PruneMask load_mask(const std::string& path);

}  // namespace rewindlab
