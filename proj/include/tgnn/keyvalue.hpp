#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tgnn {

/**
 * @brief Flat `key = value` document used for specs, field files and checkpoints.
 *
 * Blank lines and lines starting with `#` are ignored. Keys are unique; a
 * repeated key is a parse error. Values keep their source line for error
 * messages. Lists are comma separated.
 */
class KeyValueDoc {
public:
    struct Entry {
        std::string key;
        std::string value;
        int line = 0;
    };

    static KeyValueDoc parse(std::string_view text, std::string source = "<string>");
    static KeyValueDoc load(const std::filesystem::path& path);

    bool has(std::string_view key) const;
    const Entry* find(std::string_view key) const;

    std::string get_string(std::string_view key) const;
    std::string get_string(std::string_view key, std::string fallback) const;
    double get_double(std::string_view key) const;
    double get_double(std::string_view key, double fallback) const;
    std::int64_t get_int(std::string_view key) const;
    std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
    bool get_bool(std::string_view key, bool fallback) const;
    std::vector<double> get_doubles(std::string_view key) const;
    std::vector<std::int64_t> get_ints(std::string_view key) const;

    /// Throws SpecError naming the first key not in `allowed`.
    void reject_unknown(std::span<const std::string_view> allowed) const;

    void set(std::string key, std::string value);
    void set(std::string key, double value);
    void set(std::string key, std::int64_t value);
    void set(std::string key, int value) { set(std::move(key), static_cast<std::int64_t>(value)); }
    void set(std::string key, std::span<const double> values);
    void set(std::string key, std::span<const int> values);

    const std::vector<Entry>& entries() const { return entries_; }
    const std::string& source() const { return source_; }

    std::string to_string() const;
    void save(const std::filesystem::path& path) const;

private:
    std::string where(const Entry& e) const;

    std::vector<Entry> entries_;
    std::string source_ = "<memory>";
};

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// 64-bit FNV-1a as a 16-digit hex string.
std::string content_hash(std::string_view text);

}  // namespace tgnn
