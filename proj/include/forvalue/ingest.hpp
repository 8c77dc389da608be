#pragma once

// On-disk activation dump: a JSON manifest plus one little-endian binary file
// per sample.
//
// Per-sample layout:
//   "FVD1" | T u32 | d u32 | P u32 | hidden T*d f32 | targets T u32 (local
//   index into the manifest vocabulary) | probs T*P f32 | residual T f32 |
//   crc32 u32
// The trailing CRC-32 covers every preceding byte of the file.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ranges>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "forvalue/error.hpp"
#include "forvalue/record.hpp"

namespace forvalue {

inline constexpr int kFormatVersion = 1;
inline constexpr std::array<char, 4> kRecordMagic = {'F', 'V', 'D', '1'};
inline constexpr const char* kManifestName = "manifest.json";

struct SampleEntry {
    std::string id;
    Role role = Role::training;
    std::optional<std::string> class_label;
    std::optional<bool> clean;
    std::string file;
    std::uint64_t byte_length = 0;

    bool operator==(const SampleEntry&) const = default;
};

struct Manifest {
    int format_version = kFormatVersion;
    std::uint32_t embedding_dim = 0;
    std::optional<std::uint64_t> global_vocab_size;
    std::vector<TokenId> restricted_vocab;
    std::vector<SampleEntry> samples;

    bool operator==(const Manifest&) const = default;
};

inline std::uint64_t record_byte_length(std::uint64_t T, std::uint64_t d, std::uint64_t P) {
    return 16 + 4 * (T * d + T + T * P + T) + 4;
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

inline void put_f32(std::vector<std::uint8_t>& out, double v) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
    return static_cast<std::uint32_t>(in[offset]) | (static_cast<std::uint32_t>(in[offset + 1]) << 8) |
           (static_cast<std::uint32_t>(in[offset + 2]) << 16) |
           (static_cast<std::uint32_t>(in[offset + 3]) << 24);
}

inline double get_f32(std::span<const std::uint8_t> in, std::size_t offset) {
    return static_cast<double>(std::bit_cast<float>(get_u32(in, offset)));
}

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; records above 4 GiB are fed in slices.
    std::size_t offset = 0;
    while (offset < bytes.size()) {
        const std::size_t n = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
        crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(n));
        offset += n;
    }
    return static_cast<std::uint32_t>(crc);
}

inline Role role_from_string(const std::string& s) {
    if (s == "training") return Role::training;
    if (s == "valuation") return Role::valuation;
    throw data_error("unknown sample role: " + s);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + p.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("write failed: " + p.string());
}

} // namespace detail

/// Encodes the tensor payload of a record. Values are narrowed to 32-bit floats.
inline std::vector<std::uint8_t> serialize_record(const SampleRecord& rec) {
    if (!rec.vocab) throw data_error("record " + rec.id + " has no vocabulary");
    const std::size_t T = rec.length(), d = rec.dim(), P = rec.vocab->size();
    std::vector<std::uint8_t> out;
    out.reserve(record_byte_length(T, d, P));
    out.insert(out.end(), kRecordMagic.begin(), kRecordMagic.end());
    detail::put_u32(out, static_cast<std::uint32_t>(T));
    detail::put_u32(out, static_cast<std::uint32_t>(d));
    detail::put_u32(out, static_cast<std::uint32_t>(P));
    for (double x : rec.hidden.values()) detail::put_f32(out, x);
    for (std::size_t k = 0; k < T; ++k)
        detail::put_u32(out, static_cast<std::uint32_t>(rec.target_local(k)));
    for (double x : rec.probs.values()) detail::put_f32(out, x);
    for (double x : rec.residual_mass) detail::put_f32(out, x);
    detail::put_u32(out, detail::crc32_of(out));
    return out;
}

/// Decodes one binary record. Metadata (id, role, labels) comes from the
/// manifest entry. Throws io_error on truncation, data_error on corruption.
inline SampleRecord parse_record(std::span<const std::uint8_t> bytes, const SampleEntry& entry,
                                 const VocabPtr& vocab) {
    if (bytes.size() != entry.byte_length)
        throw io_error("truncated: " + entry.id + ", expected " + std::to_string(entry.byte_length) +
                       ", got " + std::to_string(bytes.size()));
    if (bytes.size() < 20 || !std::equal(kRecordMagic.begin(), kRecordMagic.end(), bytes.begin()))
        throw data_error("bad magic in record " + entry.id);
    const std::uint32_t T = detail::get_u32(bytes, 4);
    const std::uint32_t d = detail::get_u32(bytes, 8);
    const std::uint32_t P = detail::get_u32(bytes, 12);
    if (record_byte_length(T, d, P) != bytes.size())
        throw data_error("record " + entry.id + ": header (T=" + std::to_string(T) + ", d=" +
                         std::to_string(d) + ", P=" + std::to_string(P) +
                         ") does not match byte length " + std::to_string(bytes.size()));
    if (P != vocab->size())
        throw data_error("record " + entry.id + ": vocabulary width " + std::to_string(P) +
                         " differs from manifest (" + std::to_string(vocab->size()) + ")");
    const std::uint32_t stored_crc = detail::get_u32(bytes, bytes.size() - 4);
    if (detail::crc32_of(bytes.first(bytes.size() - 4)) != stored_crc)
        throw data_error("checksum mismatch: " + entry.id);

    SampleRecord rec;
    rec.id = entry.id;
    rec.role = entry.role;
    rec.class_label = entry.class_label;
    rec.clean = entry.clean;
    rec.vocab = vocab;
    rec.hidden = Matrix(T, d);
    rec.probs = Matrix(T, P);
    rec.residual_mass.resize(T);
    rec.targets.resize(T);

    std::size_t off = 16;
    for (double& x : rec.hidden.values()) { x = detail::get_f32(bytes, off); off += 4; }
    for (std::uint32_t k = 0; k < T; ++k) {
        const std::uint32_t local = detail::get_u32(bytes, off);
        off += 4;
        if (local >= P)
            throw data_error("record " + entry.id + ": target index " + std::to_string(local) +
                             " out of range at position " + std::to_string(k));
        rec.targets[k] = (*vocab)[local];
    }
    for (double& x : rec.probs.values()) { x = detail::get_f32(bytes, off); off += 4; }
    for (double& x : rec.residual_mass) { x = detail::get_f32(bytes, off); off += 4; }
    return rec;
}

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json j;
    j["format_version"] = m.format_version;
    j["embedding_dim"] = m.embedding_dim;
    if (m.global_vocab_size) j["global_vocab_size"] = *m.global_vocab_size;
    auto vocab = nlohmann::json::array();
    for (TokenId t : m.restricted_vocab) vocab.push_back(t.value);
    j["restricted_vocab"] = std::move(vocab);
    auto samples = nlohmann::json::array();
    for (const auto& s : m.samples) {
        nlohmann::json e;
        e["id"] = s.id;
        e["role"] = to_string(s.role);
        if (s.class_label) e["class_label"] = *s.class_label;
        if (s.clean) e["clean"] = *s.clean;
        e["file"] = s.file;
        e["byte_length"] = s.byte_length;
        samples.push_back(std::move(e));
    }
    j["samples"] = std::move(samples);
    return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    Manifest m;
    try {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != kFormatVersion)
            throw data_error("unsupported format_version " + std::to_string(m.format_version) +
                             " (supported: " + std::to_string(kFormatVersion) + ")");
        m.embedding_dim = j.at("embedding_dim").get<std::uint32_t>();
        if (m.embedding_dim == 0) throw data_error("embedding_dim must be positive");
        if (j.contains("global_vocab_size"))
            m.global_vocab_size = j.at("global_vocab_size").get<std::uint64_t>();
        for (const auto& t : j.at("restricted_vocab")) m.restricted_vocab.emplace_back(t.get<std::uint32_t>());
        std::set<std::string> seen;
        for (const auto& e : j.at("samples")) {
            SampleEntry s;
            s.id = e.at("id").get<std::string>();
            s.role = detail::role_from_string(e.at("role").get<std::string>());
            if (e.contains("class_label")) s.class_label = e.at("class_label").get<std::string>();
            if (e.contains("clean")) s.clean = e.at("clean").get<bool>();
            s.file = e.at("file").get<std::string>();
            s.byte_length = e.at("byte_length").get<std::uint64_t>();
            if (!seen.insert(s.id).second) throw data_error("duplicate sample id: " + s.id);
            m.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("malformed manifest: ") + e.what());
    }
    // Validates ordering.
    auto vocab = RestrictedVocab::from_sorted(m.restricted_vocab);
    if (m.global_vocab_size && !vocab.empty() && vocab.tokens().back().value >= *m.global_vocab_size)
        throw data_error("restricted vocabulary exceeds global_vocab_size");
    return m;
}

/// Writes `records` (any input range of SampleRecord) into `dir`. The sample
/// list of `manifest` is rebuilt from the records. Every record is checked
/// against the manifest before its file is written; the manifest itself is
/// written last, so a failed call never leaves a manifest describing a
/// partial dump.
template <std::ranges::input_range R>
void write_dump(const std::filesystem::path& dir, Manifest manifest, R&& records) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());
    fs::remove(dir / kManifestName, ec);

    const auto vocab = RestrictedVocab::from_sorted(manifest.restricted_vocab);
    manifest.format_version = kFormatVersion;
    manifest.samples.clear();
    std::set<std::string> seen;
    std::size_t index = 0;
    for (const SampleRecord& rec : records) {
        if (rec.dim() != manifest.embedding_dim)
            throw data_error("inconsistent record " + rec.id + ": embedding dim " +
                             std::to_string(rec.dim()) + ", manifest expects " +
                             std::to_string(manifest.embedding_dim));
        if (!seen.insert(rec.id).second) throw data_error("duplicate sample id: " + rec.id);
        auto report = validate_record(rec, vocab);
        if (!report.ok())
            throw data_error("inconsistent record " + rec.id + ": " + report.violations.front().message);
        if (manifest.global_vocab_size) {
            for (TokenId t : rec.targets)
                if (t.value >= *manifest.global_vocab_size)
                    throw data_error("inconsistent record " + rec.id + ": token beyond global vocabulary");
        }

        char name[32];
        std::snprintf(name, sizeof(name), "sample_%06zu.fvd", index++);
        const auto bytes = serialize_record(rec);
        detail::write_file(dir / name, bytes);
        manifest.samples.push_back(
            SampleEntry{rec.id, rec.role, rec.class_label, rec.clean, name, bytes.size()});
    }

    const auto tmp = dir / (std::string(kManifestName) + ".tmp");
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw io_error("cannot write " + tmp.string());
        out << manifest_to_json(manifest).dump(2) << '\n';
        if (!out) throw io_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, dir / kManifestName, ec);
    if (ec) throw io_error("cannot finalize manifest: " + ec.message());
}

/// Lazy reader over a dump directory. Records are materialized one at a time
/// in manifest order, each validated before it is returned.
class DumpReader {
public:
    explicit DumpReader(std::filesystem::path dir) : dir_(std::move(dir)) {
        const auto path = dir_ / kManifestName;
        std::ifstream in(path);
        if (!in) throw io_error("missing manifest: " + path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw data_error(std::string("malformed manifest: ") + e.what());
        }
        manifest_ = manifest_from_json(j);
        vocab_ = make_vocab(RestrictedVocab::from_sorted(manifest_.restricted_vocab));
    }

    const Manifest& manifest() const noexcept { return manifest_; }
    const VocabPtr& vocab() const noexcept { return vocab_; }
    const std::filesystem::path& dir() const noexcept { return dir_; }
    std::size_t size() const noexcept { return manifest_.samples.size(); }
    std::size_t position() const noexcept { return next_; }

    /// Reads the next record; std::nullopt at the end.
    std::optional<SampleRecord> next() {
        if (next_ >= manifest_.samples.size()) return std::nullopt;
        return load(next_++);
    }

    /// Decodes the record at manifest position `index` without validating its
    /// contents (framing, length and checksum are still enforced).
    SampleRecord load_unvalidated(std::size_t index) const {
        const SampleEntry& entry = manifest_.samples.at(index);
        const auto path = dir_ / entry.file;
        std::error_code ec;
        if (!std::filesystem::exists(path, ec))
            throw io_error("missing file for sample " + entry.id + ": " + path.string());
        const auto bytes = detail::read_file(path);
        SampleRecord rec = parse_record(bytes, entry, vocab_);
        if (rec.dim() != manifest_.embedding_dim)
            throw data_error("record " + entry.id + ": embedding dim " + std::to_string(rec.dim()) +
                             ", manifest declares " + std::to_string(manifest_.embedding_dim));
        return rec;
    }

    /// Reads and validates the record at manifest position `index`,
    /// independent of the cursor.
    SampleRecord load(std::size_t index) const {
        SampleRecord rec = load_unvalidated(index);
        const SampleEntry& entry = manifest_.samples[index];
        auto report = validate_record(rec, *vocab_);
        if (!report.ok()) {
            std::string msg = "invalid record " + entry.id + ":";
            for (const auto& v : report.violations) msg += " " + v.message + ";";
            throw data_error(msg);
        }
        return rec;
    }

    /// Materializes every remaining record.
    std::vector<SampleRecord> read_all() {
        std::vector<SampleRecord> out;
        out.reserve(manifest_.samples.size() - next_);
        while (auto r = next()) out.push_back(std::move(*r));
        return out;
    }

private:
    std::filesystem::path dir_;
    Manifest manifest_;
    VocabPtr vocab_;
    std::size_t next_ = 0;
};

inline DumpReader read_dump(const std::filesystem::path& dir) { return DumpReader(dir); }

/// Manifest for a set of records sharing one vocabulary and width.
inline Manifest make_manifest(const RestrictedVocab& vocab, std::uint32_t dim,
                              std::optional<std::uint64_t> global_vocab_size = std::nullopt) {
    Manifest m;
    m.embedding_dim = dim;
    m.global_vocab_size = global_vocab_size;
    m.restricted_vocab.assign(vocab.begin(), vocab.end());
    return m;
}

} // namespace forvalue
