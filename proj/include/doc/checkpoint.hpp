#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "doc/errors.hpp"
#include "doc/models.hpp"

namespace doc {

// Flat named-array checkpoint container. Layout:
//   magic "DOCCKPT1" | u64 meta_len | meta json | u32 narrays |
//   per array: u32 name_len | name | u64 len | raw f64 values
// Doubles are written verbatim so reloads are bit-exact.
namespace ckpt {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

inline void write_array(std::ostream& os, const std::string& name,
                        const std::vector<double>& values) {
    write_u32(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_u64(os, values.size());
    os.write(reinterpret_cast<const char*>(values.data()),
             std::streamsize(values.size() * sizeof(double)));
}

inline std::pair<std::string, std::vector<double>> read_array(std::istream& is) {
    std::uint32_t nlen = read_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    std::uint64_t len = read_u64(is);
    std::vector<double> values(len);
    is.read(reinterpret_cast<char*>(values.data()),
            std::streamsize(len * sizeof(double)));
    return {name, values};
}

inline constexpr char kMagic[8] = {'D', 'O', 'C', 'C', 'K', 'P', 'T', '1'};

}  // namespace ckpt

inline void save_checkpoint(const TabularBundle& b, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    nlohmann::json meta;
    meta["variant"] = "tabular";
    meta["method"] = method_name(b.method);
    meta["num_states"] = b.num_states;
    meta["num_actions"] = b.num_actions;
    meta["horizon"] = b.horizon;
    meta["num_z"] = b.num_z;
    meta["row_sig"] = b.row_sig;
    std::string mtext = meta.dump();
    os.write(ckpt::kMagic, 8);
    ckpt::write_u64(os, mtext.size());
    os.write(mtext.data(), std::streamsize(mtext.size()));

    std::vector<std::pair<std::string, const std::vector<double>*>> arrays = {
        {"q_logits", &b.q_logits.values},
        {"policy_logits", &b.policy_logits.values},
        {"prior_logits", &b.prior_logits.values},
        {"value", &b.value.values},
        {"energy", &b.energy.values},
        {"meta.reward_atoms", &b.reward_atoms},
        {"meta.return_values", &b.return_values},
    };
    ckpt::write_u32(os, std::uint32_t(arrays.size()));
    for (const auto& [name, vals] : arrays) ckpt::write_array(os, name, *vals);
}

inline TabularBundle load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, ckpt::kMagic, 8) != 0)
        throw ParseError("load_checkpoint: bad magic in " + path);
    std::uint64_t mlen = ckpt::read_u64(is);
    std::string mtext(mlen, '\0');
    is.read(mtext.data(), std::streamsize(mlen));
    nlohmann::json meta = nlohmann::json::parse(mtext);
    if (meta.at("variant") != "tabular")
        throw ParseError("load_checkpoint: unsupported variant");

    TabularBundle b;
    b.method = parse_method(meta.at("method").get<std::string>());
    b.num_states = meta.at("num_states").get<int>();
    b.num_actions = meta.at("num_actions").get<int>();
    b.horizon = meta.at("horizon").get<int>();
    b.num_z = meta.at("num_z").get<int>();
    b.row_sig = meta.at("row_sig").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < b.row_sig.size(); ++i)
        b.sig_row.emplace(b.row_sig[i], int(i));

    std::uint32_t n = ckpt::read_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        auto [name, values] = ckpt::read_array(is);
        if (name == "q_logits") b.q_logits.values = values;
        else if (name == "policy_logits") b.policy_logits.values = values;
        else if (name == "prior_logits") b.prior_logits.values = values;
        else if (name == "value") b.value.values = values;
        else if (name == "energy") b.energy.values = values;
        else if (name == "meta.reward_atoms") b.reward_atoms = values;
        else if (name == "meta.return_values") b.return_values = values;
        else throw ParseError("load_checkpoint: unknown array " + name);
    }
    if (!is) throw ParseError("load_checkpoint: truncated file " + path);
    for (ad::ParamStore* s : {&b.q_logits, &b.policy_logits, &b.prior_logits,
                              &b.value, &b.energy}) {
        s->grads.assign(s->values.size(), 0.0);
    }
    b.q_logits.name = "q_logits";
    b.policy_logits.name = "policy_logits";
    b.prior_logits.name = "prior_logits";
    b.value.name = "value";
    b.energy.name = "energy";
    return b;
}

}  // namespace doc
