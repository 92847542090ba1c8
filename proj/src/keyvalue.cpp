#include "tgnn/keyvalue.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tgnn/error.hpp"

namespace tgnn {
namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_commas(std::string_view s) {
    std::vector<std::string_view> out;
    if (trim(s).empty()) return out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(',', start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc{} && ptr == end;
}

}  // namespace

KeyValueDoc KeyValueDoc::parse(std::string_view text, std::string source) {
    KeyValueDoc doc;
    doc.source_ = std::move(source);
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        const auto raw = text.substr(start, nl == std::string_view::npos ? text.size() - start : nl - start);
        ++line_no;
        const auto line = trim(raw);
        if (!line.empty() && line.front() != '#') {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw SpecError(doc.source_ + ":" + std::to_string(line_no) + ": expected 'key = value'");
            }
            Entry e{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
            if (e.key.empty()) {
                throw SpecError(doc.source_ + ":" + std::to_string(line_no) + ": empty key");
            }
            if (doc.has(e.key)) {
                throw SpecError(doc.source_ + ":" + std::to_string(line_no) + ": duplicate key '" + e.key + "'");
            }
            doc.entries_.push_back(std::move(e));
        }
        if (nl == std::string_view::npos) break;
        start = nl + 1;
    }
    return doc;
}

KeyValueDoc KeyValueDoc::load(const std::filesystem::path& path) {
    return parse(read_text_file(path), path.string());
}

const KeyValueDoc::Entry* KeyValueDoc::find(std::string_view key) const {
    auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
    return it == entries_.end() ? nullptr : &*it;
}

bool KeyValueDoc::has(std::string_view key) const { return find(key) != nullptr; }

std::string KeyValueDoc::where(const Entry& e) const {
    return source_ + ":" + std::to_string(e.line) + ": key '" + e.key + "'";
}

std::string KeyValueDoc::get_string(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw SpecError(source_ + ": missing required key '" + std::string(key) + "'");
    return e->value;
}

std::string KeyValueDoc::get_string(std::string_view key, std::string fallback) const {
    const auto* e = find(key);
    return e ? e->value : fallback;
}

double KeyValueDoc::get_double(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw SpecError(source_ + ": missing required key '" + std::string(key) + "'");
    double v = 0.0;
    if (!parse_number(e->value, v)) throw SpecError(where(*e) + ": not a number: '" + e->value + "'");
    return v;
}

double KeyValueDoc::get_double(std::string_view key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

std::int64_t KeyValueDoc::get_int(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw SpecError(source_ + ": missing required key '" + std::string(key) + "'");
    std::int64_t v = 0;
    if (!parse_number(e->value, v)) throw SpecError(where(*e) + ": not an integer: '" + e->value + "'");
    return v;
}

std::int64_t KeyValueDoc::get_int(std::string_view key, std::int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

bool KeyValueDoc::get_bool(std::string_view key, bool fallback) const {
    const auto* e = find(key);
    if (!e) return fallback;
    if (e->value == "true" || e->value == "1" || e->value == "yes") return true;
    if (e->value == "false" || e->value == "0" || e->value == "no") return false;
    throw SpecError(where(*e) + ": not a boolean: '" + e->value + "'");
}

std::vector<double> KeyValueDoc::get_doubles(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw SpecError(source_ + ": missing required key '" + std::string(key) + "'");
    std::vector<double> out;
    for (auto item : split_commas(e->value)) {
        double v = 0.0;
        if (!parse_number(item, v)) throw SpecError(where(*e) + ": bad list element '" + std::string(item) + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<std::int64_t> KeyValueDoc::get_ints(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw SpecError(source_ + ": missing required key '" + std::string(key) + "'");
    std::vector<std::int64_t> out;
    for (auto item : split_commas(e->value)) {
        std::int64_t v = 0;
        if (!parse_number(item, v)) throw SpecError(where(*e) + ": bad list element '" + std::string(item) + "'");
        out.push_back(v);
    }
    return out;
}

void KeyValueDoc::reject_unknown(std::span<const std::string_view> allowed) const {
    for (const auto& e : entries_) {
        if (std::find(allowed.begin(), allowed.end(), e.key) == allowed.end()) {
            throw SpecError(where(e) + ": unknown key");
        }
    }
}

void KeyValueDoc::set(std::string key, std::string value) {
    for (auto& e : entries_) {
        if (e.key == key) {
            e.value = std::move(value);
            return;
        }
    }
    entries_.push_back(Entry{std::move(key), std::move(value), 0});
}

void KeyValueDoc::set(std::string key, double value) { set(std::move(key), format_double(value)); }

void KeyValueDoc::set(std::string key, std::int64_t value) { set(std::move(key), std::to_string(value)); }

void KeyValueDoc::set(std::string key, std::span<const double> values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ", ";
        s += format_double(values[i]);
    }
    set(std::move(key), std::move(s));
}

void KeyValueDoc::set(std::string key, std::span<const int> values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(values[i]);
    }
    set(std::move(key), std::move(s));
}

std::string KeyValueDoc::to_string() const {
    std::string out;
    for (const auto& e : entries_) {
        out += e.key;
        out += " = ";
        out += e.value;
        out += '\n';
    }
    return out;
}

void KeyValueDoc::save(const std::filesystem::path& path) const { write_text_file(path, to_string()); }

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string content_hash(std::string_view text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace tgnn
