#include "rewindlab/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rewindlab {

void CheckpointStore::store(std::int64_t iteration, const ParamStore& state) {
    if (snapshots_.count(iteration)) {
        throw std::logic_error("checkpoint store '" + run_id_ + "': iteration " +
                               std::to_string(iteration) + " already snapshotted");
    }
    Checkpoint cp;
    cp.run_id = run_id_;
    cp.iteration = iteration;
    // Copy by declaration order so stray bindings (batch inputs, labels)
    // never leak into a snapshot.
    for (const auto& name : state.order) cp.state.insert(name, state.at(name));
    snapshots_.emplace(iteration, std::move(cp));
}

const Checkpoint& CheckpointStore::restore(std::int64_t iteration) const {
    auto it = snapshots_.find(iteration);
    if (it == snapshots_.end()) {
        std::ostringstream msg;
        msg << "checkpoint store '" << run_id_ << "': no snapshot at iteration " << iteration
            << "; available:";
        if (snapshots_.empty()) {
            msg << " (none)";
        } else {
            for (const auto& [k, _] : snapshots_) msg << ' ' << k;
        }
        throw std::out_of_range(msg.str());
    }
    return it->second;
}

std::vector<std::int64_t> CheckpointStore::iterations() const {
    std::vector<std::int64_t> out;
    out.reserve(snapshots_.size());
    for (const auto& [k, _] : snapshots_) out.push_back(k);
    return out;
}

bool SnapshotPolicy::wants(std::int64_t iteration, std::int64_t total_iterations) const {
    if (iteration == 0 || iteration == total_iterations) return true;
    if (cadence > 0 && iteration % cadence == 0) return true;
    return std::find(forced.begin(), forced.end(), iteration) != forced.end();
}

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'W', 'L', 'C'};
constexpr std::uint8_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw std::runtime_error("checkpoint file: truncated while reading u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t lo = read_u32(is);
    std::uint64_t hi = read_u32(is);
    return lo | (hi << 32);
}

// Little-endian float32 round-trip. On the targeted platforms float is
// already IEEE-754 little-endian, so these are straight memcpy's.
static_assert(sizeof(float) == 4, "float must be 32-bit IEEE-754");

void write_f32_block(std::ostream& os, const std::vector<float>& data) {
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
}

void read_f32_block(std::istream& is, std::vector<float>& data) {
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint file: truncated tensor payload");
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        os.write(kCheckpointMagic, 4);
        os.put(static_cast<char>(kCheckpointVersion));
        write_u32(os, static_cast<std::uint32_t>(checkpoint.run_id.size()));
        os.write(checkpoint.run_id.data(), static_cast<std::streamsize>(checkpoint.run_id.size()));
        write_u64(os, static_cast<std::uint64_t>(checkpoint.iteration));
        write_u32(os, static_cast<std::uint32_t>(checkpoint.state.order.size()));
        for (const auto& name : checkpoint.state.order) {
            const Tensor& t = checkpoint.state.at(name);
            write_u32(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
            for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
            write_f32_block(os, t.data);
        }
        if (!os) throw std::runtime_error("failed writing checkpoint to '" + tmp + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw std::runtime_error("cannot move checkpoint into place at '" + path + "'");
    }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

bool state_equal(const ParamStore& a, const ParamStore& b) {
    if (a.order != b.order) return false;
    for (const auto& name : a.order) {
        if (!bitwise_equal(a.at(name), b.at(name))) return false;
    }
    return true;
}

std::uint64_t state_checksum(const ParamStore& state) {
    // FNV-1a over names and raw float bytes, in declaration order.
    std::uint64_t h = 1469598103934665603ull;
    auto mix_bytes = [&](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& name : state.order) {
        mix_bytes(name.data(), name.size());
        const Tensor& t = state.at(name);
        mix_bytes(t.data.data(), t.data.size() * sizeof(float));
    }
    return h;
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint file '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw std::runtime_error("'" + path + "' is not a checkpoint file (bad magic)");
    }
    int version = is.get();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint file '" + path + "': unsupported version " +
                                 std::to_string(version));
    }
    Checkpoint cp;
    std::uint32_t id_len = read_u32(is);
    cp.run_id.resize(id_len);
    is.read(cp.run_id.data(), id_len);
    cp.iteration = static_cast<std::int64_t>(read_u64(is));
    std::uint32_t count = read_u32(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        std::uint32_t rank = read_u32(is);
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(read_u32(is)));
        Tensor t(shape);
        read_f32_block(is, t.data);
        cp.state.insert(name, std::move(t));
    }
    return cp;
}

}  // namespace rewindlab
