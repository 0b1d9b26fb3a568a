#include "respilot/io.hpp"

#include "respilot/errors.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace respilot {

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = kDigits[h & 0xF];
        h >>= 4;
    }
    return out;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

std::string dump_canonical(const nlohmann::json& doc) { return doc.dump(2) + "\n"; }

void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << dump_canonical(doc);
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
    auto arr = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& arr, std::string_view field) {
    if (!arr.is_array()) throw ParseError(std::string(field) + ": expected an array of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number())
            throw ParseError(std::string(field) + "[" + std::to_string(i) + "]: expected a number");
        v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    }
    return v;
}

const nlohmann::json& require_field(const nlohmann::json& obj, std::string_view key,
                                    std::string_view context) {
    if (!obj.is_object()) throw ParseError(std::string(context) + ": expected an object");
    auto it = obj.find(std::string(key));
    if (it == obj.end())
        throw ParseError(std::string(context) + ": missing field '" + std::string(key) + "'");
    return *it;
}

void check_schema_version(const nlohmann::json& doc, int expected, std::string_view context) {
    const auto& v = require_field(doc, "schema_version", context);
    if (!v.is_number_integer() || v.get<int>() != expected)
        throw ParseError(std::string(context) + ": unsupported schema_version " + v.dump() +
                         " (expected " + std::to_string(expected) + ")");
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace respilot
