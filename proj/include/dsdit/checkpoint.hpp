// Checkpoint container: magic "DSCK", format version, config text, training
// counters, RNG state, optional optimizer moments, the named parameter table
// in canonical (sorted) order as DTNS entries, and a trailing FNV-1a digest
// of everything before it. load(save(m)) reproduces forward outputs bit-exactly.
#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "dsdit/dtns.hpp"
#include "dsdit/model.hpp"
#include "dsdit/rng.hpp"
#include "dsdit/tape.hpp"

namespace dsdit {

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    ModelConfig config;
    ParamStore params;
    std::uint64_t train_step = 0;
    SeededRng::State rng_state{};
    bool has_optimizer = false;
    std::uint64_t opt_step = 0;
    ParamStore opt_m, opt_v;
};

namespace detail {

inline void write_table(std::ostream& os, const ParamStore& store) {
    write_pod<std::uint64_t>(os, store.size());
    for (const auto& [name, tensor] : store) {
        write_pod<std::uint64_t>(os, name.size());
        os.write(name.data(), std::streamsize(name.size()));
        write_dtns(os, tensor);
    }
}

inline ParamStore read_table(std::istream& is) {
    ParamStore store;
    const auto count = read_pod<std::uint64_t>(is, "table size");
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = read_pod<std::uint64_t>(is, "name length");
        if (len > 4096) throw IoError("checkpoint: parameter name too long");
        std::string name(len, '\0');
        is.read(name.data(), std::streamsize(len));
        if (!is) throw IoError("checkpoint: truncated name");
        store.add(name, read_dtns(is));
    }
    return store;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ostringstream body(std::ios::binary);
    body.write("DSCK", 4);
    detail::write_pod<std::uint32_t>(body, Checkpoint::kVersion);

    const std::string cfg_text = ckpt.config.to_kv().to_text();
    detail::write_pod<std::uint64_t>(body, cfg_text.size());
    body.write(cfg_text.data(), std::streamsize(cfg_text.size()));

    detail::write_pod<std::uint64_t>(body, ckpt.train_step);
    for (std::uint64_t s : ckpt.rng_state.s) detail::write_pod<std::uint64_t>(body, s);
    detail::write_pod<std::uint8_t>(body, ckpt.rng_state.has_spare ? 1 : 0);
    detail::write_pod<double>(body, ckpt.rng_state.spare);

    detail::write_pod<std::uint8_t>(body, ckpt.has_optimizer ? 1 : 0);
    if (ckpt.has_optimizer) {
        detail::write_pod<std::uint64_t>(body, ckpt.opt_step);
        detail::write_table(body, ckpt.opt_m);
        detail::write_table(body, ckpt.opt_v);
    }
    detail::write_table(body, ckpt.params);

    const std::string bytes = body.str();
    const std::uint64_t digest = fnv1a64(bytes.data(), bytes.size());

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for write: " + path);
    os.write(bytes.data(), std::streamsize(bytes.size()));
    detail::write_pod<std::uint64_t>(os, digest);
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open for read: " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16) throw IoError("checkpoint: file too small");

    std::uint64_t stored_digest = 0;
    std::memcpy(&stored_digest, bytes.data() + bytes.size() - 8, 8);
    const std::uint64_t digest = fnv1a64(bytes.data(), bytes.size() - 8);
    if (digest != stored_digest) throw IoError("checkpoint: content digest mismatch");

    std::istringstream body(bytes.substr(0, bytes.size() - 8), std::ios::binary);
    char magic[4];
    body.read(magic, 4);
    if (!body || std::memcmp(magic, "DSCK", 4) != 0) throw IoError("checkpoint: bad magic");
    const auto version = detail::read_pod<std::uint32_t>(body, "version");
    if (version != Checkpoint::kVersion)
        throw IoError("checkpoint: unsupported format version " + std::to_string(version));

    Checkpoint ckpt;
    const auto cfg_len = detail::read_pod<std::uint64_t>(body, "config length");
    std::string cfg_text(cfg_len, '\0');
    body.read(cfg_text.data(), std::streamsize(cfg_len));
    if (!body) throw IoError("checkpoint: truncated config");
    ckpt.config = ModelConfig::from_kv(KvMap::from_text(cfg_text));

    ckpt.train_step = detail::read_pod<std::uint64_t>(body, "train step");
    for (auto& s : ckpt.rng_state.s) s = detail::read_pod<std::uint64_t>(body, "rng state");
    ckpt.rng_state.has_spare = detail::read_pod<std::uint8_t>(body, "rng spare flag") != 0;
    ckpt.rng_state.spare = detail::read_pod<double>(body, "rng spare");

    ckpt.has_optimizer = detail::read_pod<std::uint8_t>(body, "optimizer flag") != 0;
    if (ckpt.has_optimizer) {
        ckpt.opt_step = detail::read_pod<std::uint64_t>(body, "optimizer step");
        ckpt.opt_m = detail::read_table(body);
        ckpt.opt_v = detail::read_table(body);
    }
    ckpt.params = detail::read_table(body);
    return ckpt;
}

inline DsDitModel model_from_checkpoint(const Checkpoint& ckpt) {
    return DsDitModel(ckpt.config, ckpt.params);
}

// Resume refuses a checkpoint whose model config differs from the one the
// experiment asks for.
inline void require_resumable(const Checkpoint& ckpt, const ModelConfig& wanted) {
    if (!(ckpt.config == wanted))
        throw ContractError("checkpoint: model config mismatch, cannot resume");
}

} // namespace dsdit
