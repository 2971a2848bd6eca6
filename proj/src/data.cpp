#include "popo/data.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace popo::data {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

float get_f32(const std::uint8_t* p) { return std::bit_cast<float>(get_u32(p)); }

std::vector<std::uint8_t> frame_header(const nlohmann::json& header) {
    const std::string text = header.dump();
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    return out;
}

Framed parse_frame(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
        throw FormatError(FormatError::Kind::bad_magic, "bad magic: not a POPO container");
    }
    if (bytes.size() < 12) {
        throw FormatError(FormatError::Kind::truncated,
                          "truncated: expected at least 12 bytes, got " + std::to_string(bytes.size()));
    }
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kFormatVersion) {
        throw FormatError(FormatError::Kind::unsupported_version, "unsupported format version " + std::to_string(version));
    }
    const std::size_t header_len = get_u32(bytes.data() + 8);
    if (bytes.size() < 12 + header_len) {
        throw FormatError(FormatError::Kind::truncated, "truncated: expected " + std::to_string(12 + header_len) +
                                                            " header bytes, got " + std::to_string(bytes.size()));
    }
    Framed f;
    try {
        f.header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("bad header: ") + e.what());
    }
    if (!f.header.is_object()) throw FormatError(FormatError::Kind::bad_header, "bad header: not a JSON object");
    f.payload_offset = 12 + header_len;
    return f;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

std::string git_blob_sha1(std::span<const std::uint8_t> bytes) {
    const std::string prefix = "blob " + std::to_string(bytes.size()) + '\0';
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, prefix.data(), prefix.size()) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("SHA-1 computation failed");
    }
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

Dataset::Dataset(Info info, const std::vector<Transition>& transitions, nlohmann::json manifest)
    : info_(std::move(info)), manifest_(std::move(manifest)) {
    if (info_.obs_dim < 1 || info_.act_dim < 1) throw DimensionError("dataset dimensions must be positive");
    if (!(info_.max_action > 0.0)) throw ConfigError("max_action must be positive");
    if (manifest_.is_null()) manifest_ = nlohmann::json::object();
    for (const auto& t : transitions) {
        if (t.obs.size() != static_cast<std::size_t>(info_.obs_dim) ||
            t.next_obs.size() != static_cast<std::size_t>(info_.obs_dim) ||
            t.act.size() != static_cast<std::size_t>(info_.act_dim)) {
            throw DimensionError("transition dimensions differ from the dataset header");
        }
        if (t.done != 0.0f && t.done != 1.0f) throw ConfigError("done must be 0 or 1");
        obs_.insert(obs_.end(), t.obs.begin(), t.obs.end());
        act_.insert(act_.end(), t.act.begin(), t.act.end());
        reward_.push_back(t.reward);
        next_obs_.insert(next_obs_.end(), t.next_obs.begin(), t.next_obs.end());
        done_.push_back(t.done);
    }
    finalize();
}

void Dataset::finalize() {
    auto finite = [](const std::vector<float>& v) {
        return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
    };
    if (!finite(obs_) || !finite(act_) || !finite(reward_) || !finite(next_obs_)) {
        throw NumericalError("dataset contains non-finite values");
    }
    const auto bytes = serialize();
    hash_ = git_blob_sha1(bytes);
}

std::span<const float> Dataset::row(const std::vector<float>& col, int width, std::size_t i) {
    const std::size_t w = static_cast<std::size_t>(width);
    if ((i + 1) * w > col.size()) throw DimensionError("transition index out of range");
    return {col.data() + i * w, w};
}

Transition Dataset::transition(std::size_t i) const {
    auto o = obs(i), a = act(i), n = next_obs(i);
    return {{o.begin(), o.end()}, {a.begin(), a.end()}, reward(i), {n.begin(), n.end()}, done(i)};
}

namespace {
nlohmann::json header_of(const Dataset& d) {
    return {{"env_id", d.info().env_id},         {"obs_dim", d.info().obs_dim}, {"act_dim", d.info().act_dim},
            {"max_action", d.info().max_action}, {"count", d.count()},          {"manifest", d.manifest()}};
}

std::size_t row_floats(int obs_dim, int act_dim) { return 2 * static_cast<std::size_t>(obs_dim) + act_dim + 2; }
}  // namespace

std::vector<std::uint8_t> Dataset::serialize() const {
    std::vector<std::uint8_t> out = frame_header(header_of(*this));
    out.reserve(out.size() + count() * row_floats(info_.obs_dim, info_.act_dim) * 4);
    for (std::size_t i = 0; i < count(); ++i) {
        for (float x : obs(i)) put_f32(out, x);
        for (float x : act(i)) put_f32(out, x);
        put_f32(out, reward_[i]);
        for (float x : next_obs(i)) put_f32(out, x);
        put_f32(out, done_[i]);
    }
    return out;
}

std::size_t Dataset::serialized_size() const {
    return frame_header(header_of(*this)).size() + count() * row_floats(info_.obs_dim, info_.act_dim) * 4;
}

void write(const Dataset& dataset, const std::filesystem::path& path) { write_file(path, dataset.serialize()); }

Dataset read(const std::filesystem::path& path, std::optional<Dataset::Info> expect) {
    const auto bytes = read_file(path);
    const Framed f = parse_frame(bytes);
    Dataset d;
    std::size_t count = 0;
    try {
        d.info_.env_id = f.header.at("env_id").get<std::string>();
        d.info_.obs_dim = f.header.at("obs_dim").get<int>();
        d.info_.act_dim = f.header.at("act_dim").get<int>();
        d.info_.max_action = f.header.at("max_action").get<double>();
        count = f.header.at("count").get<std::size_t>();
        d.manifest_ = f.header.value("manifest", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::bad_header, std::string("bad header: ") + e.what());
    }
    if (d.info_.obs_dim < 1 || d.info_.act_dim < 1) {
        throw FormatError(FormatError::Kind::dim_mismatch, "dim mismatch: header dimensions must be positive");
    }
    if (expect) {
        if (expect->obs_dim != d.info_.obs_dim || expect->act_dim != d.info_.act_dim ||
            (!expect->env_id.empty() && expect->env_id != d.info_.env_id)) {
            throw FormatError(FormatError::Kind::dim_mismatch,
                              "dim mismatch: file holds " + d.info_.env_id + " (obs " + std::to_string(d.info_.obs_dim) +
                                  ", act " + std::to_string(d.info_.act_dim) + "), expected " + expect->env_id +
                                  " (obs " + std::to_string(expect->obs_dim) + ", act " +
                                  std::to_string(expect->act_dim) + ")");
        }
    }
    const std::size_t width = row_floats(d.info_.obs_dim, d.info_.act_dim);
    const std::size_t expected = f.payload_offset + count * width * 4;
    if (bytes.size() < expected) {
        throw FormatError(FormatError::Kind::truncated, "truncated: expected " + std::to_string(expected) +
                                                            " bytes, got " + std::to_string(bytes.size()));
    }
    if (bytes.size() > expected) {
        throw FormatError(FormatError::Kind::trailing_bytes, "trailing bytes: expected " + std::to_string(expected) +
                                                                 " bytes, got " + std::to_string(bytes.size()));
    }
    const auto o = static_cast<std::size_t>(d.info_.obs_dim), a = static_cast<std::size_t>(d.info_.act_dim);
    d.obs_.resize(count * o);
    d.act_.resize(count * a);
    d.reward_.resize(count);
    d.next_obs_.resize(count * o);
    d.done_.resize(count);
    const std::uint8_t* p = bytes.data() + f.payload_offset;
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t k = 0; k < o; ++k, p += 4) d.obs_[i * o + k] = get_f32(p);
        for (std::size_t k = 0; k < a; ++k, p += 4) d.act_[i * a + k] = get_f32(p);
        d.reward_[i] = get_f32(p);
        p += 4;
        for (std::size_t k = 0; k < o; ++k, p += 4) d.next_obs_[i * o + k] = get_f32(p);
        d.done_[i] = get_f32(p);
        p += 4;
        if (d.done_[i] != 0.0f && d.done_[i] != 1.0f) {
            throw FormatError(FormatError::Kind::bad_header, "row " + std::to_string(i) + ": done must be 0 or 1");
        }
    }
    d.finalize();
    return d;
}

template <typename T>
Batch<T> gather(const Dataset& dataset, const std::vector<std::size_t>& indices) {
    const auto& info = dataset.info();
    const auto b = static_cast<Eigen::Index>(indices.size());
    Batch<T> out{nn::Matrix<T>(info.obs_dim, b), nn::Matrix<T>(info.act_dim, b), nn::Vector<T>(b),
                 nn::Matrix<T>(info.obs_dim, b), nn::Vector<T>(b),          indices};
    for (Eigen::Index c = 0; c < b; ++c) {
        const std::size_t i = indices[static_cast<std::size_t>(c)];
        const auto o = dataset.obs(i), a = dataset.act(i), n = dataset.next_obs(i);
        for (int r = 0; r < info.obs_dim; ++r) {
            out.obs(r, c) = static_cast<T>(o[static_cast<std::size_t>(r)]);
            out.next_obs(r, c) = static_cast<T>(n[static_cast<std::size_t>(r)]);
        }
        for (int r = 0; r < info.act_dim; ++r) out.act(r, c) = static_cast<T>(a[static_cast<std::size_t>(r)]);
        out.reward(c) = static_cast<T>(dataset.reward(i));
        out.done(c) = static_cast<T>(dataset.done(i));
    }
    return out;
}

template <typename T>
Batch<T> sample(const Dataset& dataset, int batch_size, Rng& rng) {
    if (dataset.count() == 0) throw ConfigError("cannot sample from an empty dataset");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    std::vector<std::size_t> indices(static_cast<std::size_t>(batch_size));
    for (auto& i : indices) i = rng.index(dataset.count());
    return gather<T>(dataset, indices);
}

template Batch<float> sample<float>(const Dataset&, int, Rng&);
template Batch<double> sample<double>(const Dataset&, int, Rng&);
template Batch<float> gather<float>(const Dataset&, const std::vector<std::size_t>&);
template Batch<double> gather<double>(const Dataset&, const std::vector<std::size_t>&);

nlohmann::json inspect(const Dataset& dataset) {
    auto summarize = [&](const std::vector<float>& col, int width) {
        nlohmann::json dims = nlohmann::json::array();
        const std::size_t w = static_cast<std::size_t>(width);
        for (std::size_t k = 0; k < w; ++k) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
            for (std::size_t i = 0; i < dataset.count(); ++i) {
                const double x = col[i * w + k];
                lo = std::min(lo, x);
                hi = std::max(hi, x);
                sum += x;
            }
            if (dataset.count() == 0) {
                dims.push_back({{"min", nullptr}, {"max", nullptr}, {"mean", nullptr}});
            } else {
                dims.push_back({{"min", lo}, {"max", hi}, {"mean", sum / static_cast<double>(dataset.count())}});
            }
        }
        return dims;
    };
    const auto& info = dataset.info();
    return {{"env_id", info.env_id},
            {"obs_dim", info.obs_dim},
            {"act_dim", info.act_dim},
            {"max_action", info.max_action},
            {"count", dataset.count()},
            {"content_hash", dataset.content_hash()},
            {"columns",
             {{"obs", summarize(dataset.obs_column(), info.obs_dim)},
              {"act", summarize(dataset.act_column(), info.act_dim)},
              {"reward", summarize(dataset.reward_column(), 1)},
              {"next_obs", summarize(dataset.next_obs_column(), info.obs_dim)},
              {"done", summarize(dataset.done_column(), 1)}}},
            {"manifest", dataset.manifest()}};
}

}  // namespace popo::data
