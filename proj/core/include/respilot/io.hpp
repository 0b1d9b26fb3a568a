#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <random>
#include <filesystem>
#include <string>
#include <string_view>

namespace respilot {

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

/// Reads and parses a JSON document; ParseError carries path and line/column.
nlohmann::json read_json_file(const std::filesystem::path& path);

/// Writes `doc` with 2-space indentation and a trailing newline. Doubles round-trip exactly.
void write_json_file(const nlohmann::json& doc, const std::filesystem::path& path);

std::string dump_canonical(const nlohmann::json& doc);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& arr, std::string_view field);

/// Field accessor that turns nlohmann type errors into ParseError naming `context`.
const nlohmann::json& require_field(const nlohmann::json& obj, std::string_view key,
                                    std::string_view context);

void check_schema_version(const nlohmann::json& doc, int expected, std::string_view context);

/// mt19937_64 with hand-rolled uniform/normal transforms: std distributions are not
/// specified bit-exactly, and generated fixtures must be identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();  // [0, 1)
    double uniform(double lo, double hi);
    double normal();  // standard normal (Box-Muller)

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace respilot
