#include "rewindlab/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <tuple>

namespace rewindlab {

namespace {

PruneMask start_mask(const std::vector<PrunableView>& weights, const PruneMask* existing) {
    PruneMask mask;
    for (const auto& w : weights) {
        PruneMask::Entry e;
        e.name = w.name;
        e.shape = w.tensor->shape;
        e.keep.assign(static_cast<std::size_t>(w.tensor->numel()), 1);
        if (existing) {
            const auto* prev = existing->find(w.name);
            if (prev) {
                if (prev->shape != e.shape) {
                    throw std::invalid_argument("prune: existing mask shape " + shape_str(prev->shape) +
                                                " for '" + w.name + "' does not match " + shape_str(e.shape));
                }
                e.keep = prev->keep;
            }
        }
        mask.entries.push_back(std::move(e));
    }
    return mask;
}

void warn_fully_masked(const PruneMask& mask) {
    for (const auto& e : mask.entries) {
        bool any = false;
        for (auto k : e.keep)
            if (k) {
                any = true;
                break;
            }
        if (!any) std::cerr << "warning: pruning left '" << e.name << "' with no surviving weights\n";
    }
}

// Mask the `to_mask` smallest-magnitude surviving positions across the given
// tensors. Ties break by (tensor index, flat position) ascending.
void mask_smallest_global(const std::vector<PrunableView>& weights, PruneMask& mask,
                          std::int64_t to_mask) {
    if (to_mask <= 0) return;
    struct Cand {
        float mag;
        std::uint32_t tensor;
        std::int64_t pos;
    };
    std::vector<Cand> cands;
    for (std::size_t ti = 0; ti < weights.size(); ++ti) {
        const auto& keep = mask.entries[ti].keep;
        const auto& data = weights[ti].tensor->data;
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) {
            if (!keep[static_cast<std::size_t>(i)]) continue;
            cands.push_back({std::fabs(data[static_cast<std::size_t>(i)]), static_cast<std::uint32_t>(ti), i});
        }
    }
    if (to_mask > static_cast<std::int64_t>(cands.size())) to_mask = static_cast<std::int64_t>(cands.size());
    auto less = [](const Cand& a, const Cand& b) {
        return std::tie(a.mag, a.tensor, a.pos) < std::tie(b.mag, b.tensor, b.pos);
    };
    std::nth_element(cands.begin(), cands.begin() + to_mask, cands.end(), less);
    std::sort(cands.begin(), cands.begin() + to_mask, less);
    for (std::int64_t i = 0; i < to_mask; ++i) {
        mask.entries[cands[static_cast<std::size_t>(i)].tensor]
            .keep[static_cast<std::size_t>(cands[static_cast<std::size_t>(i)].pos)] = 0;
    }
}

}  // namespace

std::vector<PrunableView> prunable_view(const ModelSpec& spec, const ParamStore& weights) {
    std::vector<PrunableView> view;
    for (const auto& p : spec.params) {
        if (p.prunable) view.push_back({p.name, &weights.at(p.name)});
    }
    return view;
}

PruneMask full_mask(const ModelSpec& spec) {
    PruneMask mask;
    for (const auto& p : spec.params) {
        if (!p.prunable) continue;
        PruneMask::Entry e;
        e.name = p.name;
        e.shape = p.shape;
        e.keep.assign(static_cast<std::size_t>(shape_numel(p.shape)), 1);
        mask.entries.push_back(std::move(e));
    }
    mask.recount();
    return mask;
}

PruneMask prune_unstructured(const std::vector<PrunableView>& weights, double target_sparsity,
                             PruneScope scope, const PruneMask* existing) {
    if (target_sparsity < 0.0 || target_sparsity >= 1.0) {
        throw std::invalid_argument("prune: target sparsity must be in [0,1), got " +
                                    std::to_string(target_sparsity));
    }
    PruneMask mask = start_mask(weights, existing);
    if (scope == PruneScope::global) {
        std::int64_t total = 0;
        for (const auto& w : weights) total += w.tensor->numel();
        std::int64_t target_masked = static_cast<std::int64_t>(std::floor(target_sparsity * static_cast<double>(total)));
        std::int64_t already_masked = 0;
        for (const auto& e : mask.entries)
            for (auto k : e.keep) already_masked += k ? 0 : 1;
        mask_smallest_global(weights, mask, target_masked - already_masked);
    } else {
        for (std::size_t ti = 0; ti < weights.size(); ++ti) {
            std::vector<PrunableView> one = {weights[ti]};
            PruneMask sub;
            sub.entries.push_back(mask.entries[ti]);
            std::int64_t n = weights[ti].tensor->numel();
            std::int64_t target_masked = static_cast<std::int64_t>(std::floor(target_sparsity * static_cast<double>(n)));
            std::int64_t already = 0;
            for (auto k : sub.entries[0].keep) already += k ? 0 : 1;
            mask_smallest_global(one, sub, target_masked - already);
            mask.entries[ti].keep = std::move(sub.entries[0].keep);
        }
    }
    mask.target_sparsity = target_sparsity;
    mask.recount();
    warn_fully_masked(mask);
    return mask;
}

PruneMask prune_unstructured_to_count(const std::vector<PrunableView>& weights,
                                      std::int64_t target_masked, const PruneMask* existing) {
    PruneMask mask = start_mask(weights, existing);
    std::int64_t already_masked = 0;
    std::int64_t total = 0;
    for (const auto& e : mask.entries) {
        total += static_cast<std::int64_t>(e.keep.size());
        for (auto k : e.keep) already_masked += k ? 0 : 1;
    }
    if (target_masked < 0 || target_masked > total) {
        throw std::invalid_argument("prune: target masked count " + std::to_string(target_masked) +
                                    " outside [0, " + std::to_string(total) + "]");
    }
    mask_smallest_global(weights, mask, target_masked - already_masked);
    mask.recount();
    mask.target_sparsity = mask.total > 0 ? 1.0 - static_cast<double>(mask.nonzero) / static_cast<double>(mask.total) : 0.0;
    warn_fully_masked(mask);
    return mask;
}

PruneMask prune_structured(const std::vector<PrunableView>& weights, double target_sparsity,
                           const PruneMask* existing) {
    if (target_sparsity < 0.0 || target_sparsity >= 1.0) {
        throw std::invalid_argument("prune: target sparsity must be in [0,1), got " +
                                    std::to_string(target_sparsity));
    }
    PruneMask mask = start_mask(weights, existing);

    // A structure is a row of a rank-2 kernel or an output-channel slice of
    // a rank-4 kernel, identified by (tensor, structure index) with a
    // gather of its flat positions.
    struct Structure {
        double mean_mag;
        std::uint32_t tensor;
        std::int64_t index;
        std::vector<std::int64_t> positions;
        bool surviving;
    };
    std::vector<Structure> structures;
    std::int64_t total = 0;
    for (std::size_t ti = 0; ti < weights.size(); ++ti) {
        const Tensor& t = *weights[ti].tensor;
        total += t.numel();
        const auto& keep = mask.entries[ti].keep;
        auto add_structure = [&](std::int64_t index, std::vector<std::int64_t> positions) {
            if (positions.empty()) {
                throw std::invalid_argument("prune: zero-size structure in '" + weights[ti].name + "'");
            }
            Structure s;
            s.tensor = static_cast<std::uint32_t>(ti);
            s.index = index;
            double acc = 0.0;
            bool any_kept = false;
            for (auto p : positions) {
                acc += std::fabs(static_cast<double>(t.data[static_cast<std::size_t>(p)]));
                any_kept = any_kept || keep[static_cast<std::size_t>(p)];
            }
            s.mean_mag = acc / static_cast<double>(positions.size());
            s.positions = std::move(positions);
            s.surviving = any_kept;
            structures.push_back(std::move(s));
        };
        if (t.rank() == 2) {
            const std::int64_t rows = t.shape[0], cols = t.shape[1];
            for (std::int64_t r = 0; r < rows; ++r) {
                std::vector<std::int64_t> pos(static_cast<std::size_t>(cols));
                for (std::int64_t c = 0; c < cols; ++c) pos[static_cast<std::size_t>(c)] = r * cols + c;
                add_structure(r, std::move(pos));
            }
        } else if (t.rank() == 4) {
            const std::int64_t out_c = t.shape[3];
            const std::int64_t taps = t.numel() / out_c;
            for (std::int64_t oc = 0; oc < out_c; ++oc) {
                std::vector<std::int64_t> pos(static_cast<std::size_t>(taps));
                for (std::int64_t i = 0; i < taps; ++i) pos[static_cast<std::size_t>(i)] = i * out_c + oc;
                add_structure(oc, std::move(pos));
            }
        } else {
            throw std::invalid_argument("prune: structured pruning expects rank 2 or 4 kernels, '" +
                                        weights[ti].name + "' has shape " + shape_str(t.shape));
        }
    }

    std::int64_t masked = 0;
    for (const auto& e : mask.entries)
        for (auto k : e.keep) masked += k ? 0 : 1;

    std::sort(structures.begin(), structures.end(), [](const Structure& a, const Structure& b) {
        return std::tie(a.mean_mag, a.tensor, a.index) < std::tie(b.mean_mag, b.tensor, b.index);
    });
    const double target_masked = target_sparsity * static_cast<double>(total);
    for (const auto& s : structures) {
        if (static_cast<double>(masked) >= target_masked) break;
        if (!s.surviving) continue;
        auto& keep = mask.entries[s.tensor].keep;
        for (auto p : s.positions) {
            if (keep[static_cast<std::size_t>(p)]) {
                keep[static_cast<std::size_t>(p)] = 0;
                ++masked;
            }
        }
    }
    mask.target_sparsity = target_sparsity;
    mask.recount();
    warn_fully_masked(mask);
    return mask;
}

void apply_mask(Tensor& tensor, const PruneMask::Entry& entry) {
    if (static_cast<std::int64_t>(entry.keep.size()) != tensor.numel()) {
        throw std::invalid_argument("apply_mask: mask length " + std::to_string(entry.keep.size()) +
                                    " does not match tensor " + shape_str(tensor.shape));
    }
    for (std::size_t i = 0; i < entry.keep.size(); ++i) {
        if (!entry.keep[i]) tensor.data[i] = 0.0f;
    }
}

void apply_mask(ParamStore& weights, const PruneMask& mask) {
    for (const auto& e : mask.entries) apply_mask(weights.at(e.name), e);
}

double sparsity_of(const PruneMask& mask) {
    if (mask.total == 0) return 0.0;
    return 1.0 - static_cast<double>(mask.nonzero) / static_cast<double>(mask.total);
}

CompressionRatio compression_of(const PruneMask& mask) {
    if (mask.nonzero == 0) {
        throw std::domain_error("compression_of: every kernel position is masked; ratio undefined");
    }
    return {static_cast<double>(mask.total) / static_cast<double>(mask.nonzero)};
}

std::int64_t survivors_for_compression(std::int64_t kernel_count, double compression) {
    if (compression < 1.0) throw std::invalid_argument("compression ratio must be >= 1");
    return static_cast<std::int64_t>(std::floor(static_cast<double>(kernel_count) / compression));
}

double iterative_sparsity(double step_fraction, int rounds) {
    if (step_fraction <= 0.0 || step_fraction >= 1.0) {
        throw std::invalid_argument("iterative step fraction must be in (0,1)");
    }
    if (rounds < 0) throw std::invalid_argument("rounds must be >= 0");
    return 1.0 - std::pow(1.0 - step_fraction, rounds);
}

std::vector<PrunableView> filter_exempt(std::vector<PrunableView> view,
                                        const std::vector<std::string>& exempt_prefixes) {
    if (exempt_prefixes.empty()) return view;
    std::vector<PrunableView> kept;
    for (auto& v : view) {
        bool exempt = false;
        for (const auto& prefix : exempt_prefixes) {
            if (v.name.rfind(prefix, 0) == 0) {
                exempt = true;
                break;
            }
        }
        if (!exempt) kept.push_back(std::move(v));
    }
    return kept;
}

std::uint64_t mask_checksum(const PruneMask& mask) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& e : mask.entries) {
        mix(e.name.data(), e.name.size());
        for (int d : e.shape) mix(&d, sizeof(d));
        mix(e.keep.data(), e.keep.size());
    }
    return h;
}

bool mask_is_subset(const PruneMask& later, const PruneMask& earlier) {
    if (later.entries.size() != earlier.entries.size()) return false;
    for (std::size_t i = 0; i < later.entries.size(); ++i) {
        const auto& a = later.entries[i].keep;
        const auto& b = earlier.entries[i].keep;
        if (a.size() != b.size()) return false;
        for (std::size_t j = 0; j < a.size(); ++j)
            if (a[j] && !b[j]) return false;
    }
    return true;
}

namespace {

constexpr char kMaskMagic[4] = {'R', 'W', 'L', 'M'};
constexpr std::uint8_t kMaskVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("mask file: truncated while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_mask(const PruneMask& mask, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
    os.write(kMaskMagic, 4);
    os.put(static_cast<char>(kMaskVersion));
    write_u32(os, static_cast<std::uint32_t>(mask.entries.size()));
    for (const auto& e : mask.entries) {
        write_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        write_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) write_u32(os, static_cast<std::uint32_t>(d));
        std::vector<std::uint8_t> packed((e.keep.size() + 7) / 8, 0);
        for (std::size_t i = 0; i < e.keep.size(); ++i) {
            if (e.keep[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        }
        os.write(reinterpret_cast<const char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    }
    if (!os) throw std::runtime_error("failed writing mask to '" + path + "'");
}

PruneMask load_mask(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open mask file '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMaskMagic, 4) != 0) {
        throw std::runtime_error("'" + path + "' is not a mask file (bad magic)");
    }
    int version = is.get();
    if (version != kMaskVersion) {
        throw std::runtime_error("mask file '" + path + "': unsupported version " + std::to_string(version));
    }
    PruneMask mask;
    std::uint32_t count = read_u32(is);
    for (std::uint32_t t = 0; t < count; ++t) {
        PruneMask::Entry e;
        std::uint32_t name_len = read_u32(is);
        e.name.resize(name_len);
        is.read(e.name.data(), name_len);
        std::uint32_t rank = read_u32(is);
        for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(static_cast<int>(read_u32(is)));
        std::int64_t n = shape_numel(e.shape);
        std::vector<std::uint8_t> packed(static_cast<std::size_t>((n + 7) / 8));
        is.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
        if (!is) throw std::runtime_error("mask file '" + path + "': truncated tensor record");
        e.keep.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            e.keep[static_cast<std::size_t>(i)] =
                (packed[static_cast<std::size_t>(i / 8)] >> (i % 8)) & 1u;
        }
        mask.entries.push_back(std::move(e));
    }
    mask.recount();
    mask.target_sparsity = sparsity_of(mask);
    return mask;
}

}  // namespace rewindlab
