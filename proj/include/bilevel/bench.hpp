#pragma once

#include "bilevel/algorithms.hpp"
#include "bilevel/problems.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bilevel {

enum class Algorithm { Nested, PsiAppx, PhiAppx, Bleaq2 };

std::string_view to_string(Algorithm algorithm);
Algorithm parse_algorithm(std::string_view name);
std::vector<Algorithm> all_algorithms();

struct ConfigOverrides {
    std::optional<double> accuracy;
    /// Applied to the variance termination at both levels.
    std::optional<double> alpha_stop;
    std::optional<int> local_search_every_k;
    std::optional<std::uint64_t> max_ll_calls;
};

struct Campaign {
    Algorithm algorithm = Algorithm::Bleaq2;
    std::string problem;
    std::optional<SmdDims> dims;
    int runs = 31;
    std::uint64_t base_seed = 0;
    ConfigOverrides overrides;
    std::filesystem::path out_dir;
    /// Worker threads; 0 picks the hardware concurrency.
    int threads = 1;

    std::uint64_t seed_for(int run) const { return base_seed + static_cast<std::uint64_t>(run); }
    /// Problem name with its dimensions, e.g. "smd13[1,2,1]".
    std::string label() const;
    BleaqConfig config() const;
    void validate() const;

    nlohmann::json to_json() const;
    static Campaign from_json(const nlohmann::json& j);
};

/// Runs one seed of a campaign. Exceptions inside the solver become an Aborted record.
RunRecord run_single(const Campaign& campaign, int run);

/// Runs every seed. With a non-empty out_dir, writes one record file per run and manifest.json.
std::vector<RunRecord> run_campaign(const Campaign& campaign);

inline constexpr int kRecordVersion = 1;

std::string format_record(const RunRecord& record);
RunRecord parse_record(const std::string& text);
std::string record_filename(const RunRecord& record);
void write_record(const RunRecord& record, const std::filesystem::path& dir);
/// Reads every record file in `dir`, sorted by file name.
std::vector<RunRecord> load_records(const std::filesystem::path& dir);

struct Savings {
    enum class Kind { Percent, Large, Undefined, Missing };
    Kind kind = Kind::Undefined;
    double percent = 0.0;

    /// "63%", "Large", "undefined" or "-".
    std::string text() const;
};

/// Relative saving of `candidate` against `reference`, in percent of the reference total.
Savings compute_savings(std::uint64_t candidate_total, std::uint64_t reference_total);
/// Table form: a failed reference reads "Large", a failed candidate reads "-".
Savings compute_savings(std::optional<std::uint64_t> candidate_total,
                        std::optional<std::uint64_t> reference_total);

/// Lower-middle element of the sorted values.
template <class T>
T lower_median(std::vector<T> values) {
    if (values.empty()) throw UsageError("lower_median: no values");
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

struct CellStats {
    int runs = 0;
    int successes = 0;
    std::optional<std::uint64_t> ul_min, ul_med, ul_max;
    std::optional<std::uint64_t> ll_min, ll_med, ll_max;
    /// Total of the median-representative successful run.
    std::optional<std::uint64_t> total_med;
    /// Median UL plus median LL, the alternative reading of a median row.
    std::optional<std::uint64_t> total_split;
};

struct SummaryRow {
    std::string problem;
    std::vector<CellStats> cells;
    /// Per algorithm, against the reference; the reference's own entry is Missing.
    std::vector<Savings> savings;
    std::vector<Savings> savings_split;
};

struct SummaryTable {
    std::vector<std::string> algorithms;
    std::string reference;
    std::vector<SummaryRow> rows;

    std::string to_csv() const;
    std::string to_markdown() const;
};

/// Groups records by problem and algorithm. The reference defaults to "nested" when present.
SummaryTable summarize(const std::vector<RunRecord>& records, std::string reference = {});

struct PlotFiles {
    std::vector<std::filesystem::path> bars;
    std::vector<std::filesystem::path> error_series;
    std::string notice;
};

/// Writes bars_<problem>.csv with one row per run and, for every run with a trace,
/// errors_<problem>_<algorithm>_<seed>.csv with one row per generation.
PlotFiles emit_plot_data(const std::vector<RunRecord>& records, const std::filesystem::path& dir);

}  // namespace bilevel
