#include "sea/artifact_io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace sea::io {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

uint32_t get_u32(const std::string& bytes, size_t& off, const char* what) {
    if (off + 4 > bytes.size()) {
        throw std::runtime_error(std::string("truncated file while reading ") + what);
    }
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(bytes[off + size_t(i)])) << (8 * i);
    off += 4;
    return v;
}

void put_u32_be(std::string& out, uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

uint32_t crc32_png(const uint8_t* data, size_t len) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t n = 0; n < 256; ++n) {
            uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    uint32_t c = 0xFFFFFFFFu;
    for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

uint32_t adler32(const uint8_t* data, size_t len) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

void png_chunk(std::string& out, const char type[4], const std::string& data) {
    put_u32_be(out, uint32_t(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    put_u32_be(out, crc32_png(reinterpret_cast<const uint8_t*>(body.data()), body.size()));
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void atomic_write(const std::string& path, const std::string& bytes) {
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string tensor_to_bytes(const num::Tensor& t) {
    t.validate_finite("tensor save");
    std::string out = "SEAT";
    put_u32(out, uint32_t(t.shape.size()));
    for (int d : t.shape) put_u32(out, uint32_t(d));
    size_t pos = out.size();
    out.resize(pos + t.data.size() * 4);
    std::memcpy(out.data() + pos, t.data.data(), t.data.size() * 4);
    return out;
}

num::Tensor tensor_from_bytes(const std::string& bytes, size_t& offset) {
    if (offset + 4 > bytes.size() || bytes.compare(offset, 4, "SEAT") != 0) {
        throw std::runtime_error("bad tensor magic (expected SEAT)");
    }
    offset += 4;
    uint32_t ndim = get_u32(bytes, offset, "tensor ndim");
    if (ndim == 0 || ndim > 8) {
        throw std::runtime_error("unreasonable tensor ndim " + std::to_string(ndim));
    }
    std::vector<int> shape;
    int64_t numel = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        uint32_t d = get_u32(bytes, offset, "tensor dim");
        if (d == 0 || d > (1u << 24)) throw std::runtime_error("unreasonable tensor dim");
        shape.push_back(int(d));
        numel *= d;
    }
    if (offset + size_t(numel) * 4 > bytes.size()) {
        throw std::runtime_error("truncated tensor data");
    }
    num::Tensor t = num::Tensor::zeros(shape);
    std::memcpy(t.data.data(), bytes.data() + offset, size_t(numel) * 4);
    offset += size_t(numel) * 4;
    t.validate_finite("tensor load");
    return t;
}

void save_tensor(const std::string& path, const num::Tensor& t) {
    atomic_write(path, tensor_to_bytes(t));
}

num::Tensor load_tensor(const std::string& path) {
    std::string bytes = read_file(path);
    size_t off = 0;
    num::Tensor t = tensor_from_bytes(bytes, off);
    if (off != bytes.size()) throw std::runtime_error("trailing bytes in tensor file " + path);
    return t;
}

void save_checkpoint(const std::string& path, const vlm::ParameterStore& params) {
    std::string out;
    for (const auto& [name, e] : params.entries()) {
        put_u32(out, uint32_t(name.size()));
        out += name;
        out.push_back(char(uint8_t(e.tag)));
        out += tensor_to_bytes(e.tensor);
    }
    atomic_write(path, out);
}

vlm::ParameterStore load_checkpoint(const std::string& path) {
    std::string bytes = read_file(path);
    vlm::ParameterStore store;
    size_t off = 0;
    while (off < bytes.size()) {
        uint32_t name_len = get_u32(bytes, off, "checkpoint entry name length");
        if (name_len == 0 || name_len > 4096) {
            throw std::runtime_error("unreasonable checkpoint name length");
        }
        if (off + name_len + 1 > bytes.size()) {
            throw std::runtime_error("truncated checkpoint entry in " + path);
        }
        std::string name = bytes.substr(off, name_len);
        off += name_len;
        vlm::Component tag = vlm::component_from_byte(uint8_t(bytes[off]));
        ++off;
        store.insert(name, tensor_from_bytes(bytes, off), tag);
    }
    // A freshly loaded store is its own reference point.
    store.take_snapshot();
    return store;
}

void export_png(const std::string& path, const num::Tensor& image) {
    if (image.shape.size() != 3 || image.shape[2] != 3) {
        throw std::invalid_argument("export_png: expected [H,W,3] image, got " +
                                    num::shape_str(image.shape));
    }
    const int h = image.shape[0], w = image.shape[1];
    std::string raw;  // filter byte + RGB per scanline
    raw.reserve(size_t(h) * (1 + size_t(w) * 3));
    for (int y = 0; y < h; ++y) {
        raw.push_back('\0');
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                float v = image.data[(size_t(y) * w + size_t(x)) * 3 + size_t(c)];
                long q = std::lround(double(v) * 255.0);
                raw.push_back(char(uint8_t(std::min(255L, std::max(0L, q)))));
            }
        }
    }

    std::string png("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    put_u32_be(ihdr, uint32_t(w));
    put_u32_be(ihdr, uint32_t(h));
    ihdr.push_back(8);   // bit depth
    ihdr.push_back(2);   // truecolor
    ihdr.push_back(0);   // compression
    ihdr.push_back(0);   // filter
    ihdr.push_back(0);   // no interlace
    png_chunk(png, "IHDR", ihdr);

    // zlib stream with stored (uncompressed) deflate blocks
    std::string idat;
    idat.push_back('\x78');
    idat.push_back('\x01');
    size_t pos = 0;
    while (pos < raw.size()) {
        size_t block = std::min<size_t>(65535, raw.size() - pos);
        bool final = pos + block == raw.size();
        idat.push_back(final ? '\x01' : '\x00');
        idat.push_back(char(block & 0xFF));
        idat.push_back(char((block >> 8) & 0xFF));
        idat.push_back(char(~block & 0xFF));
        idat.push_back(char((~block >> 8) & 0xFF));
        idat.append(raw, pos, block);
        pos += block;
    }
    put_u32_be(idat, adler32(reinterpret_cast<const uint8_t*>(raw.data()), raw.size()));
    png_chunk(png, "IDAT", idat);
    png_chunk(png, "IEND", "");
    atomic_write(path, png);
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    size_t start = 0;
    while (start <= text.size()) {
        size_t nl = text.find('\n', start);
        if (nl == std::string::npos) {
            lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    if (!lines.empty() && lines.back().empty()) lines.pop_back();  // trailing newline
    for (auto& l : lines) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
    }
    return lines;
}

constexpr const char* kTargetPrefix = "Sure, here is";

}  // namespace

attack::Corpora load_corpora(const std::string& harmful_path, const std::string& pairs_path) {
    attack::Corpora corpora;

    const std::vector<std::string> harm_lines = split_lines(read_file(harmful_path));
    for (size_t i = 0; i < harm_lines.size(); ++i) {
        if (harm_lines[i].empty()) {
            throw std::runtime_error(harmful_path + " line " + std::to_string(i + 1) +
                                     ": empty harmful string");
        }
        corpora.harmful_strings.push_back(harm_lines[i]);
    }

    const std::vector<std::string> pair_lines = split_lines(read_file(pairs_path));
    for (size_t i = 0; i < pair_lines.size(); ++i) {
        if (pair_lines[i].empty()) {
            throw std::runtime_error(pairs_path + " line " + std::to_string(i + 1) +
                                     ": empty pair entry");
        }
        json j;
        try {
            j = json::parse(pair_lines[i]);
        } catch (const json::parse_error& e) {
            throw std::runtime_error(pairs_path + " line " + std::to_string(i + 1) +
                                     ": malformed JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("goal") || !j.contains("target") ||
            !j["goal"].is_string() || !j["target"].is_string()) {
            throw std::runtime_error(pairs_path + " line " + std::to_string(i + 1) +
                                     ": expected {\"goal\": ..., \"target\": ...}");
        }
        attack::GoalTarget gt{j["goal"].get<std::string>(), j["target"].get<std::string>()};
        if (gt.goal.empty()) {
            throw std::runtime_error(pairs_path + " line " + std::to_string(i + 1) +
                                     ": empty goal");
        }
        if (gt.target.rfind(kTargetPrefix, 0) != 0) {
            throw std::runtime_error(pairs_path + " line " + std::to_string(i + 1) +
                                     ": target for goal \"" + gt.goal +
                                     "\" does not begin with \"Sure, here is\"");
        }
        corpora.goal_targets.push_back(std::move(gt));
    }

    corpora.validate();
    return corpora;
}

void save_corpora(const std::string& harmful_path, const std::string& pairs_path,
                  const attack::Corpora& corpora) {
    corpora.validate();
    std::string harm;
    for (const auto& s : corpora.harmful_strings) {
        harm += s;
        harm += '\n';
    }
    atomic_write(harmful_path, harm);

    std::string pairs;
    for (const auto& gt : corpora.goal_targets) {
        json j = {{"goal", gt.goal}, {"target", gt.target}};
        pairs += j.dump();
        pairs += '\n';
    }
    atomic_write(pairs_path, pairs);
}

std::string digest_bytes(const std::string& bytes) {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : bytes) {
        h ^= uint64_t(uint8_t(c));
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

std::string digest_file(const std::string& path) {
    return digest_bytes(read_file(path));
}

void write_manifest(const std::string& path, const RunManifest& m) {
    json j;
    j["run_id"] = m.run_id;
    j["tool_version"] = m.tool_version;
    j["seeds"] = m.seeds;
    j["config"] = m.config;
    json inputs = json::object();
    for (const auto& f : m.input_files) inputs[f] = digest_file(f);
    json outputs = json::object();
    for (const auto& f : m.output_files) outputs[f] = digest_file(f);
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    atomic_write(path, j.dump(2) + "\n");
}

std::vector<std::string> verify_manifest(const std::string& manifest_path) {
    json j = json::parse(read_file(manifest_path));
    std::vector<std::string> drifted;
    for (const char* section : {"inputs", "outputs"}) {
        if (!j.contains(section)) continue;
        for (const auto& [file, digest] : j[section].items()) {
            try {
                if (digest_file(file) != digest.get<std::string>()) drifted.push_back(file);
            } catch (const std::exception&) {
                drifted.push_back(file);  // missing counts as drift
            }
        }
    }
    return drifted;
}

std::string timestamp_utc() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace sea::io
