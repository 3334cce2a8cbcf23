#include "bdlab/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>

#include "bdlab/errors.hpp"
#include "bdlab/io.hpp"

namespace bdlab {

namespace {

template <class T>
void put_le(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw ConfigError("checkpoint: truncated file");
    unsigned char b[sizeof(T)];
    std::memcpy(b, in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    pos += sizeof(T);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

struct Entry {
    std::string name;
    const WeightSlot* slot;
};

// Every tensor of the model in a fixed order.
std::vector<Entry> entries(const DenoiserModel& model) {
    std::vector<Entry> out;
    for (const auto& l : model.layers()) {
        for (const auto& s : l.slots) out.push_back({l.name + "." + s.name, &s});
        if (l.lora) {
            out.push_back({l.name + ".lora.B", &l.lora->B});
            out.push_back({l.name + ".lora.A", &l.lora->A});
        }
        if (l.oft)
            for (const auto& q : l.oft->Q) out.push_back({l.name + "." + q.name, &q});
    }
    return out;
}

void put_array(std::string& out, const NumArray& a) {
    for (double v : a.values()) put_le(out, v);
}

NumArray get_array(const std::string& in, std::size_t& pos, const std::vector<std::size_t>& shape) {
    NumArray a(shape);
    for (double& v : a.values()) v = get_le<double>(in, pos);
    return a;
}

DenoiserModel deserialize_impl(const std::string& bytes, nlohmann::json* meta);

}  // namespace

nlohmann::json checkpoint_manifest(const DenoiserModel& model) {
    nlohmann::json m = nlohmann::json::array();
    for (const auto& e : entries(model)) {
        m.push_back({{"name", e.name},
                     {"kind", e.slot->variational() ? "variational" : "plain"},
                     {"shape", e.slot->mean().shape()},
                     {"trainable", e.slot->trainable}});
    }
    return m;
}

std::string serialize_checkpoint(const DenoiserModel& model, const nlohmann::json& meta) {
    const ModelArch& a = model.arch();
    nlohmann::json header = {
        {"schedule", {{"kind", to_string(model.schedule().kind)}, {"T", model.schedule().T}}},
        {"arch", {{"dim", a.dim}, {"width", a.width}, {"time_dim", a.time_dim}, {"num_labels", a.num_labels}}},
        {"manifest", checkpoint_manifest(model)},
        {"meta", meta}};
    const std::string text = header.dump();
    std::string out(kCheckpointMagic, 6);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& e : entries(model)) {
        if (e.slot->var) {
            put_array(out, e.slot->var->mu);
            put_array(out, e.slot->var->rho);
            put_array(out, e.slot->var->prior_mean);
            put_le(out, e.slot->var->prior_sigma);
        } else {
            put_array(out, e.slot->value);
        }
    }
    return out;
}

namespace {

DenoiserModel deserialize_impl(const std::string& bytes, nlohmann::json* meta) {
    if (bytes.size() < 6 || bytes.compare(0, 6, kCheckpointMagic) != 0) throw ConfigError("checkpoint: bad magic");
    std::size_t pos = 6;
    const auto version = get_le<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion) throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    const auto len = get_le<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw ConfigError("checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint: malformed header: ") + e.what());
    }
    pos += len;

    ModelArch arch;
    arch.dim = header.at("arch").at("dim").get<std::size_t>();
    arch.width = header.at("arch").at("width").get<std::size_t>();
    arch.time_dim = header.at("arch").at("time_dim").get<std::size_t>();
    arch.num_labels = header.at("arch").at("num_labels").get<std::size_t>();
    const NoiseSchedule sched = make_schedule(header.at("schedule").at("T").get<int>(),
                                              schedule_kind_from_string(header.at("schedule").at("kind")));
    DenoiserModel model(arch, sched, 0);

    for (const auto& m : header.at("manifest")) {
        const std::string name = m.at("name");
        const auto shape = m.at("shape").get<std::vector<std::size_t>>();
        WeightSlot slot;
        slot.trainable = m.at("trainable").get<bool>();
        if (m.at("kind") == "variational") {
            VariationalParameter p;
            p.mu = get_array(bytes, pos, shape);
            p.rho = get_array(bytes, pos, shape);
            p.prior_mean = get_array(bytes, pos, shape);
            p.prior_sigma = get_le<double>(bytes, pos);
            slot.var = std::move(p);
        } else {
            slot.value = get_array(bytes, pos, shape);
        }

        const auto dot = name.find('.');
        Layer& layer = model.layer(name.substr(0, dot));
        const std::string rest = name.substr(dot + 1);
        if (rest == "lora.B" || rest == "lora.A") {
            if (!layer.lora) layer.lora.emplace();
            slot.name = rest;
            if (rest == "lora.B") {
                layer.lora->rank = static_cast<int>(shape.at(1));
                layer.lora->B = std::move(slot);
            } else {
                layer.lora->A = std::move(slot);
            }
        } else if (rest.rfind("oft.Q", 0) == 0) {
            if (!layer.oft) layer.oft.emplace();
            layer.oft->block = static_cast<int>(shape.at(0));
            slot.name = rest;
            layer.oft->Q.push_back(std::move(slot));
        } else {
            WeightSlot& target = layer.slot(rest);
            if (slot.mean().shape() != target.mean().shape()) {
                throw ConfigError("checkpoint: shape mismatch for " + name);
            }
            slot.name = rest;
            target = std::move(slot);
        }
    }
    if (pos != bytes.size()) throw ConfigError("checkpoint: trailing bytes");
    if (meta != nullptr) *meta = header.value("meta", nlohmann::json::object());
    return model;
}

}  // namespace

DenoiserModel deserialize_checkpoint(const std::string& bytes, nlohmann::json* meta) {
    try {
        return deserialize_impl(bytes, meta);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint: malformed header: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const DenoiserModel& model, const nlohmann::json& meta) {
    atomic_write_file(path, serialize_checkpoint(model, meta));
}

DenoiserModel load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta) {
    return deserialize_checkpoint(read_file(path), meta);
}

}  // namespace bdlab
