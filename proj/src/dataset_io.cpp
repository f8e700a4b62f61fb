#include "d3t/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "d3t/errors.hpp"

namespace d3t {

namespace {

constexpr std::size_t kHeaderSize = 16;

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

std::uint16_t get_u16(const unsigned char* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::string stem_for(std::int64_t id) {
    std::ostringstream os;
    os << "sample_" << std::setw(6) << std::setfill('0') << id;
    return os.str();
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<unsigned char> encode_image(const Image& image) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    if (image.height > 0xffff || image.width > 0xffff || image.channels > 0xffff)
        throw FormatError("image too large for SCN1 header");
    std::vector<unsigned char> out;
    out.reserve(kHeaderSize + image.pixels.size() * 4);
    out.insert(out.end(), {'S', 'C', 'N', '1'});
    put_u16(out, static_cast<std::uint16_t>(image.height));
    put_u16(out, static_cast<std::uint16_t>(image.width));
    put_u16(out, static_cast<std::uint16_t>(image.channels));
    out.resize(kHeaderSize, 0);
    const auto* raw = reinterpret_cast<const unsigned char*>(image.pixels.data());
    out.insert(out.end(), raw, raw + image.pixels.size() * sizeof(float));
    return out;
}

Image decode_image(std::span<const unsigned char> bytes) {
    if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), "SCN1", 4) != 0)
        throw FormatError("bad SCN1 magic");
    Image image(get_u16(bytes.data() + 4), get_u16(bytes.data() + 6), get_u16(bytes.data() + 8));
    const std::size_t payload = image.pixels.size() * sizeof(float);
    if (bytes.size() != kHeaderSize + payload) throw FormatError("SCN1 payload size mismatch");
    std::memcpy(image.pixels.data(), bytes.data() + kHeaderSize, payload);
    return image;
}

void save_dataset(const std::filesystem::path& dir, std::span<const SceneSample> samples) {
    std::filesystem::create_directories(dir);
    for (const auto& s : samples) {
        const std::string stem = stem_for(s.sample_id);
        const auto bytes = encode_image(s.image);
        std::ofstream bin(dir / (stem + ".scn"), std::ios::binary);
        bin.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!bin) throw FormatError("failed writing " + stem + ".scn");

        nlohmann::json objects = nlohmann::json::array();
        for (const auto& o : s.objects) {
            objects.push_back({{"class_id", o.class_id},
                               {"box", {o.box.cx, o.box.cy, o.box.w, o.box.h}}});
        }
        nlohmann::json meta = {
            {"sample_id", s.sample_id}, {"domain", to_string(s.domain)}, {"objects", objects}};
        std::ofstream js(dir / (stem + ".json"));
        js << meta.dump() << '\n';
        if (!js) throw FormatError("failed writing " + stem + ".json");
    }
}

std::vector<SceneSample> load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> bins;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() == ".scn") bins.push_back(entry.path());
    }
    std::sort(bins.begin(), bins.end());

    std::vector<SceneSample> out;
    out.reserve(bins.size());
    for (const auto& bin : bins) {
        SceneSample s;
        const auto bytes = read_file(bin);
        s.image = decode_image(bytes);

        auto sidecar = bin;
        sidecar.replace_extension(".json");
        const auto text = read_file(sidecar);
        nlohmann::json meta;
        try {
            meta = nlohmann::json::parse(text.begin(), text.end());
            s.sample_id = meta.at("sample_id").get<std::int64_t>();
            const auto domain = meta.at("domain").get<std::string>();
            if (domain == "source") {
                s.domain = Domain::Source;
            } else if (domain == "target") {
                s.domain = Domain::Target;
            } else {
                throw FormatError("unknown domain tag '" + domain + "'");
            }
            for (const auto& o : meta.at("objects")) {
                const auto& b = o.at("box");
                s.objects.push_back(GroundTruthObject{
                    o.at("class_id").get<int>(),
                    Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                        b.at(3).get<double>()}});
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(sidecar.string() + ": " + e.what());
        }
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(),
              [](const SceneSample& a, const SceneSample& b) { return a.sample_id < b.sample_id; });
    return out;
}

}  // namespace d3t
