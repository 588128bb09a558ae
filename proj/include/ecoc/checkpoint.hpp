#pragma once

// Binary checkpoint container:
//   ecoc-ckpt v1\n
//   meta <count>\n            then <key>=<value>\n lines, keys sorted
//   params <count>\n          per tensor: <name> <rows> <cols>\n + rows*cols little-endian f64
//   optim <kind> <steps> <count>\n   per moment tensor: <rows> <cols>\n + data (m then v)
//   epoch <e>\n
//   end\n

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ecoc/error.hpp"
#include "ecoc/optim.hpp"
#include "ecoc/tensor.hpp"

namespace ecoc {

struct NamedTensor {
    std::string name;
    nn::Matrix value;
};

struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<NamedTensor> params;
    nn::OptimizerKind optimizer = nn::OptimizerKind::sgd;
    std::uint64_t optimizer_steps = 0;
    std::vector<nn::Matrix> first_moments;
    std::vector<nn::Matrix> second_moments;
    std::uint64_t epoch = 0;

    const std::string& get(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw FormatError("checkpoint: missing metadata key '" + key + "'");
        return it->second;
    }
};

namespace detail {

inline void put_f64(std::string& out, double x) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

inline void put_matrix(std::string& out, const nn::Matrix& m) {
    for (double x : m.values()) put_f64(out, x);
}

class Reader {
public:
    explicit Reader(const std::string& data) : d_(data) {}

    std::string line() {
        auto nl = d_.find('\n', pos_);
        if (nl == std::string::npos) throw FormatError("checkpoint: truncated (expected a text line)");
        std::string s = d_.substr(pos_, nl - pos_);
        pos_ = nl + 1;
        return s;
    }

    nn::Matrix matrix(std::size_t rows, std::size_t cols) {
        if (rows != 0 && cols > (d_.size() - pos_) / 8 / rows) throw FormatError("checkpoint: truncated tensor data");
        nn::Matrix m(rows, cols);
        for (double& x : m.values()) {
            std::uint64_t u = 0;
            for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(d_[pos_ + i])) << (8 * i);
            pos_ += 8;
            x = std::bit_cast<double>(u);
        }
        return m;
    }

    bool at_end() const { return pos_ == d_.size(); }

private:
    const std::string& d_;
    std::size_t pos_ = 0;
};

inline std::vector<std::string> words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

inline std::uint64_t parse_u64(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        auto v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw FormatError(std::string("checkpoint: bad ") + what + " '" + s + "'");
    }
}

}  // namespace detail

inline std::string checkpoint_to_bytes(const Checkpoint& ck) {
    std::string out = "ecoc-ckpt v1\n";
    out += "meta " + std::to_string(ck.meta.size()) + "\n";
    for (const auto& [k, v] : ck.meta) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
            throw ConfigError("checkpoint metadata may not contain newlines or '=' in keys: " + k);
        out += k + "=" + v + "\n";
    }
    out += "params " + std::to_string(ck.params.size()) + "\n";
    for (const auto& p : ck.params) {
        out += p.name + " " + std::to_string(p.value.rows()) + " " + std::to_string(p.value.cols()) + "\n";
        detail::put_matrix(out, p.value);
    }
    if (ck.first_moments.size() != ck.second_moments.size()) throw ConfigError("checkpoint: moment lists differ in length");
    out += std::string("optim ") + nn::to_string(ck.optimizer) + " " + std::to_string(ck.optimizer_steps) + " " +
           std::to_string(ck.first_moments.size()) + "\n";
    for (const auto* list : {&ck.first_moments, &ck.second_moments})
        for (const auto& m : *list) {
            out += std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
            detail::put_matrix(out, m);
        }
    out += "epoch " + std::to_string(ck.epoch) + "\n";
    out += "end\n";
    return out;
}

inline Checkpoint checkpoint_from_bytes(const std::string& data) {
    detail::Reader r(data);
    if (r.line() != "ecoc-ckpt v1") throw FormatError("checkpoint: not an ecoc-ckpt v1 file");
    Checkpoint ck;
    auto w = detail::words(r.line());
    if (w.size() != 2 || w[0] != "meta") throw FormatError("checkpoint: expected meta section");
    for (std::uint64_t i = 0, n = detail::parse_u64(w[1], "meta count"); i < n; ++i) {
        std::string kv = r.line();
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint: malformed metadata line '" + kv + "'");
        ck.meta[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    w = detail::words(r.line());
    if (w.size() != 2 || w[0] != "params") throw FormatError("checkpoint: expected params section");
    for (std::uint64_t i = 0, n = detail::parse_u64(w[1], "param count"); i < n; ++i) {
        auto h = detail::words(r.line());
        if (h.size() != 3) throw FormatError("checkpoint: malformed tensor header");
        NamedTensor t;
        t.name = h[0];
        t.value = r.matrix(detail::parse_u64(h[1], "rows"), detail::parse_u64(h[2], "cols"));
        ck.params.push_back(std::move(t));
    }
    w = detail::words(r.line());
    if (w.size() != 4 || w[0] != "optim") throw FormatError("checkpoint: expected optim section");
    try {
        ck.optimizer = nn::parse_optimizer(w[1]);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    ck.optimizer_steps = detail::parse_u64(w[2], "optimizer steps");
    const auto nm = detail::parse_u64(w[3], "moment count");
    for (auto* list : {&ck.first_moments, &ck.second_moments})
        for (std::uint64_t i = 0; i < nm; ++i) {
            auto h = detail::words(r.line());
            if (h.size() != 2) throw FormatError("checkpoint: malformed moment header");
            list->push_back(r.matrix(detail::parse_u64(h[0], "rows"), detail::parse_u64(h[1], "cols")));
        }
    w = detail::words(r.line());
    if (w.size() != 2 || w[0] != "epoch") throw FormatError("checkpoint: expected epoch line");
    ck.epoch = detail::parse_u64(w[1], "epoch");
    if (r.line() != "end" || !r.at_end()) throw FormatError("checkpoint: trailing data after end marker");
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const std::string bytes = checkpoint_to_bytes(ck);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write checkpoint " + tmp);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ConfigError("failed writing checkpoint " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw ConfigError("cannot move checkpoint into place: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read checkpoint " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return checkpoint_from_bytes(ss.str());
}

/// Copies parameters and optimizer state out of a live model/optimizer.
inline Checkpoint capture(const nn::ParameterStore& params, const nn::Optimizer& opt, std::uint64_t epoch,
                          std::map<std::string, std::string> meta) {
    Checkpoint ck;
    ck.meta = std::move(meta);
    for (std::size_t i = 0; i < params.size(); ++i) ck.params.push_back({params.at(i).node()->name, params.at(i).value()});
    ck.optimizer = opt.config().kind;
    ck.optimizer_steps = opt.steps();
    ck.first_moments = opt.first_moments();
    ck.second_moments = opt.second_moments();
    ck.epoch = epoch;
    return ck;
}

/// Writes checkpoint tensors into a model with the same parameter layout.
inline void restore(const Checkpoint& ck, nn::ParameterStore& params, nn::Optimizer* opt = nullptr) {
    if (ck.params.size() != params.size())
        throw ConfigError("checkpoint has " + std::to_string(ck.params.size()) + " tensors, model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Node& n = *params.at(i).node();
        const auto& t = ck.params[i];
        if (t.name != n.name || !t.value.same_shape(n.value))
            throw ConfigError("checkpoint tensor '" + t.name + "' does not match model parameter '" + n.name + "'");
        n.value = t.value;
    }
    if (opt) {
        if (ck.optimizer != opt->config().kind) throw ConfigError("checkpoint optimizer kind differs from the configured one");
        opt->first_moments() = ck.first_moments;
        opt->second_moments() = ck.second_moments;
        opt->set_steps(ck.optimizer_steps);
    }
}

}  // namespace ecoc
