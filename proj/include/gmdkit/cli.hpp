#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include <gmdkit/model_select.hpp>
#include <gmdkit/gpca.hpp>
#include <gmdkit/sim.hpp>

namespace gmdkit::cli {

inline constexpr const char* version = "0.1.0";

enum class Command { gmd, gpca, sgpca, fgpca, simulate, select };

const char* to_string(Command c);
Command parse_command(const std::string& name);

/// Operator descriptor: a builder kind with its parameters, or a Matrix Market file.
struct OperatorSpec
{
    std::string kind = "identity";
    nlohmann::json params = nlohmann::json::object();
    std::filesystem::path file;
};

struct PenaltyConfig
{
    PenaltyKind kind = PenaltyKind::none;
    bool use_bic = false;
    double lambda = 0.0;
    std::vector<double> grid;
    std::optional<OperatorSpec> omega;
};

struct JobConfig
{
    Command command = Command::gmd;
    std::filesystem::path data_path;
    bool center = true;
    OperatorSpec q_spec;
    OperatorSpec r_spec;
    Index k = 1;
    PenaltyConfig penalty_u;
    PenaltyConfig penalty_v;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir = "gmdkit_out";
    double tol = 1e-9;
    int max_iter = 1000;
    double gpmf_tol = 1e-7;
    int gpmf_max_outer = 500;
    OmegaSolver omega_solver = OmegaSolver::proximal_gradient;
    // simulate
    std::string experiment;
    int replicates = 20;
    std::vector<double> sigmas;
    std::string noise;
    // select
    Side side = Side::v;

    /// Resolved configuration without the output directory, echoed into the manifest.
    nlohmann::json to_json() const;
};

struct Overrides
{
    std::optional<std::string> command;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> output_dir;
};

/// Validates a JSON config; unknown keys raise ErrorKind::config naming all of them.
/// Relative paths are resolved against `base_dir`.
JobConfig parse_config(const nlohmann::json& doc, const Overrides& overrides = {},
                       const std::filesystem::path& base_dir = {});
JobConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

/// Builds the operator of dimension `dim` described by `spec`; `field` names it in errors.
QuadraticOperator build_operator(const OperatorSpec& spec, Index dim, const std::string& field);

// JSON views of results ------------------------------------------------------

nlohmann::json to_json(const VarianceReport& rep);
nlohmann::json to_json(const BICReport& rep);
nlohmann::json to_json(const sim::ExperimentReport& rep);
nlohmann::json factors_meta(const GMDFactors& f);

/// Reads U.csv, D.csv and V.csv written by `run`.
GMDFactors load_factors(const std::filesystem::path& dir);

/// Executes the job; returns the process exit code (0 ok, 2 config, 3 numerical, 4 io).
/// On failure an error JSON goes to stderr and files written by this run are removed.
int run(const JobConfig& cfg);

/// Full command line entry point: `gmdkit <command> --config FILE [--seed N] [--out DIR] [-v]`.
int main_entry(int argc, char** argv);

int exit_code(ErrorKind kind);

} // namespace gmdkit::cli
