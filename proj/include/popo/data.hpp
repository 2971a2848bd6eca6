#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popo/nn.hpp"

namespace popo::data {

/// On-disk layout, all integers and floats little-endian:
///   "POPO" | u32 version = 1 | u32 header length | UTF-8 JSON header | rows
/// The header is {env_id, obs_dim, act_dim, max_action, count, manifest}; each row is
/// obs, act, reward, next_obs, done as f32.
inline constexpr char kMagic[4] = {'P', 'O', 'P', 'O'};
inline constexpr std::uint32_t kFormatVersion = 1;

class FormatError : public IoError {
public:
    enum class Kind { bad_magic, unsupported_version, bad_header, truncated, dim_mismatch, trailing_bytes };
    FormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// One (s, a, r, s', done) record.
struct Transition {
    std::vector<float> obs;
    std::vector<float> act;
    float reward = 0.0f;
    std::vector<float> next_obs;
    float done = 0.0f;
};

template <typename T>
struct Batch {
    nn::Matrix<T> obs;       // obs_dim x B
    nn::Matrix<T> act;       // act_dim x B
    nn::Vector<T> reward;    // B
    nn::Matrix<T> next_obs;  // obs_dim x B
    nn::Vector<T> done;      // B
    std::vector<std::size_t> indices;
};

/// Immutable transition store, columnar in memory.
class Dataset {
public:
    struct Info {
        std::string env_id;
        int obs_dim = 0;
        int act_dim = 0;
        double max_action = 1.0;
    };

    Dataset(Info info, const std::vector<Transition>& transitions, nlohmann::json manifest);

    const Info& info() const { return info_; }
    std::size_t count() const { return reward_.size(); }
    const nlohmann::json& manifest() const { return manifest_; }

    std::span<const float> obs(std::size_t i) const { return row(obs_, info_.obs_dim, i); }
    std::span<const float> act(std::size_t i) const { return row(act_, info_.act_dim, i); }
    float reward(std::size_t i) const { return reward_.at(i); }
    std::span<const float> next_obs(std::size_t i) const { return row(next_obs_, info_.obs_dim, i); }
    float done(std::size_t i) const { return done_.at(i); }
    Transition transition(std::size_t i) const;

    const std::vector<float>& obs_column() const { return obs_; }
    const std::vector<float>& act_column() const { return act_; }
    const std::vector<float>& reward_column() const { return reward_; }
    const std::vector<float>& next_obs_column() const { return next_obs_; }
    const std::vector<float>& done_column() const { return done_; }

    /// Git-style blob SHA-1 (hex) of the serialized file.
    const std::string& content_hash() const { return hash_; }

    std::vector<std::uint8_t> serialize() const;

    /// Header size plus count * (2 obs_dim + act_dim + 2) * 4.
    std::size_t serialized_size() const;

private:
    friend Dataset read(const std::filesystem::path&, std::optional<Info>);
    Dataset() = default;
    static std::span<const float> row(const std::vector<float>& col, int width, std::size_t i);
    void finalize();

    Info info_;
    std::vector<float> obs_, act_, reward_, next_obs_, done_;
    nlohmann::json manifest_;
    std::string hash_;
};

std::string git_blob_sha1(std::span<const std::uint8_t> bytes);

void write(const Dataset& dataset, const std::filesystem::path& path);

/// Validates magic, version and length. When `expect` is given, env_id and dimensions must agree.
Dataset read(const std::filesystem::path& path, std::optional<Dataset::Info> expect = std::nullopt);

/// Uniform with replacement.
template <typename T>
Batch<T> sample(const Dataset& dataset, int batch_size, Rng& rng);

/// Batch of the given rows, in order.
template <typename T>
Batch<T> gather(const Dataset& dataset, const std::vector<std::size_t>& indices);

/// {count, columns: {name: {min, max, mean}} per dimension, manifest, content_hash}.
nlohmann::json inspect(const Dataset& dataset);

// Little-endian helpers shared with the checkpoint format.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32(const std::uint8_t* p);
float get_f32(const std::uint8_t* p);

/// Container framing: magic, version, header length, header. Returns payload offset.
std::vector<std::uint8_t> frame_header(const nlohmann::json& header);
struct Framed {
    nlohmann::json header;
    std::size_t payload_offset = 0;
};
Framed parse_frame(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace popo::data
