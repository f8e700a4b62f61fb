#include "d3t/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "d3t/errors.hpp"

namespace d3t {

namespace {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get_le(std::span<const unsigned char> bytes, std::size_t& pos) {
    if (pos + sizeof(T) > bytes.size()) throw FormatError("checkpoint truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::string arch_json(const ArchConfig& a) {
    nlohmann::json j = {{"scene_size", a.scene_size},
                        {"in_channels", a.in_channels},
                        {"hidden", a.hidden},
                        {"grid", a.grid},
                        {"num_classes", a.num_classes},
                        {"input_center", a.input_center},
                        {"input_gain", a.input_gain}};
    return j.dump();
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const ArchConfig& arch, const ParamVector& params) {
    if (params.size() != arch.param_count())
        throw ConfigError("parameter count does not match the architecture");
    std::vector<unsigned char> out{'D', '3', 'T', '1'};
    const std::string js = arch_json(arch);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(js.size()));
    out.insert(out.end(), js.begin(), js.end());
    put_le<std::uint64_t>(out, params.size());
    for (double v : params.values) put_le<float>(out, static_cast<float>(v));
    return out;
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "D3T1", 4) != 0)
        throw FormatError("bad checkpoint magic");
    std::size_t pos = 4;
    const auto js_len = get_le<std::uint32_t>(bytes, pos);
    if (pos + js_len > bytes.size()) throw FormatError("checkpoint truncated");
    Checkpoint ck;
    try {
        const auto j = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                             bytes.begin() + static_cast<std::ptrdiff_t>(pos + js_len));
        ck.arch.scene_size = j.at("scene_size").get<int>();
        ck.arch.in_channels = j.at("in_channels").get<int>();
        ck.arch.hidden = j.at("hidden").get<int>();
        ck.arch.grid = j.at("grid").get<int>();
        ck.arch.num_classes = j.at("num_classes").get<int>();
        ck.arch.input_center = j.at("input_center").get<double>();
        ck.arch.input_gain = j.at("input_gain").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint arch header: ") + e.what());
    }
    pos += js_len;
    ck.arch.validate();

    const auto count = get_le<std::uint64_t>(bytes, pos);
    if (count != ck.arch.param_count()) throw FormatError("checkpoint value count mismatch");
    if (bytes.size() - pos != count * sizeof(float)) throw FormatError("checkpoint size mismatch");
    ck.params = Detector(ck.arch).zeros();
    for (std::size_t i = 0; i < count; ++i) ck.params.values[i] = get_le<float>(bytes, pos);
    check_finite(ck.params, "checkpoint");
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch,
                     const ParamVector& params) {
    const auto bytes = encode_checkpoint(arch, params);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in),
                                           std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

}  // namespace d3t
