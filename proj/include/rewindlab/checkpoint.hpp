#pragma once

// In-memory checkpoint store and on-disk checkpoint files (.rwlc).
//
// A checkpoint captures the full model state at a training iteration:
// every trainable tensor plus the batch-norm moving statistics. Rewinding
// restores such a snapshot bit-exactly, so checkpoints round-trip through
// disk without any floating-point reinterpretation.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rewindlab/model_spec.hpp"

namespace rewindlab {

struct Checkpoint {
    std::string run_id;
    std::int64_t iteration = 0;
    ParamStore state;
};

// Keeps snapshots keyed by iteration. Storing the same iteration twice is an
// error (a snapshot is immutable once taken); restoring an iteration that was
// never stored reports which iterations exist.
class CheckpointStore {
public:
    explicit CheckpointStore(std::string run_id = "run") : run_id_(std::move(run_id)) {}

    const std::string& run_id() const { return run_id_; }

    void store(std::int64_t iteration, const ParamStore& state);
    const Checkpoint& restore(std::int64_t iteration) const;
    bool has(std::int64_t iteration) const { return snapshots_.count(iteration) > 0; }
    std::vector<std::int64_t> iterations() const;
    std::size_t size() const { return snapshots_.size(); }

private:
    std::string run_id_;
    std::map<std::int64_t, Checkpoint> snapshots_;
};

// Which iterations a training run snapshots: iteration 0, every multiple of
// `cadence`, each schedule boundary, each explicitly forced iteration, and the
// final iteration.
struct SnapshotPolicy {
    std::int64_t cadence = 1000;
    std::vector<std::int64_t> forced;

    bool wants(std::int64_t iteration, std::int64_t total_iterations) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Bit-level comparison and hashing of model state (used by the rewind
// round-trip invariants and the baseline-reuse check).
bool bitwise_equal(const Tensor& a, const Tensor& b);
bool state_equal(const ParamStore& a, const ParamStore& b);
std::uint64_t state_checksum(const ParamStore& state);

}  // namespace rewindlab
