// Command-line front end for benchmark campaigns: run, table, plots, list.
#include "bilevel/bench.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace bilevel;

namespace {

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string default_out_dir() {
    if (const char* env = std::getenv("BILEVEL_BENCH_OUT"); env && *env) return env;
    return "bench_out";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bilevel solver benchmark harness"};
    app.require_subcommand(1);

    std::string out_dir = default_out_dir();

    auto* run = app.add_subcommand("run", "Run seeded campaigns and write run records");
    std::string algos = "bleaq2", problems, dims_text;
    int runs = 31, threads = 1;
    std::uint64_t seed = 0;
    std::optional<double> accuracy, alpha_stop;
    std::optional<int> k;
    std::optional<std::uint64_t> budget;
    run->add_option("--algo", algos, "nested, psi-appx, phi-appx, bleaq2, a comma list, or all")
        ->capture_default_str();
    run->add_option("--problem", problems, "Problem name or comma list (see `list`)")->required();
    run->add_option("--dims", dims_text, "SMD dimensions p,q,r[,s]");
    run->add_option("--runs", runs, "Seeds per campaign")->capture_default_str()->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "Base seed; run i uses seed + i")->capture_default_str();
    run->add_option("--accuracy", accuracy, "Accuracy target at both levels");
    run->add_option("--alpha-stop", alpha_stop, "Variance-termination threshold");
    run->add_option("--k", k, "Generations between improvement local searches");
    run->add_option("--budget", budget, "Lower-level evaluation budget");
    run->add_option("--threads", threads, "Worker threads (0 = all cores)")->capture_default_str();
    run->add_option("--out", out_dir, "Record directory (default $BILEVEL_BENCH_OUT or bench_out)");

    auto* table = app.add_subcommand("table", "Summarize run records into CSV and Markdown");
    std::string reference;
    table->add_option("--out", out_dir, "Record directory");
    table->add_option("--reference", reference, "Algorithm used as the savings denominator");

    auto* plots = app.add_subcommand("plots", "Write bar-chart and error-series data files");
    std::string plot_dir;
    plots->add_option("--out", out_dir, "Record directory");
    plots->add_option("--plot-dir", plot_dir, "Destination (default <out>/plots)");

    auto* list = app.add_subcommand("list", "List problems and algorithms");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*list) {
            ProblemRegistry registry;
            std::cout << "problems:\n";
            for (const auto& name : registry.names())
                std::cout << "  " << name << (registry.needs_dims(name) ? "  (needs --dims)" : "") << '\n';
            std::cout << "algorithms:\n";
            for (Algorithm a : all_algorithms()) std::cout << "  " << to_string(a) << '\n';
            return 0;
        }

        if (*run) {
            std::vector<Algorithm> selected;
            if (algos == "all") selected = all_algorithms();
            else
                for (const auto& a : split_list(algos)) selected.push_back(parse_algorithm(a));
            std::vector<RunRecord> all;
            for (const auto& problem : split_list(problems)) {
                for (Algorithm a : selected) {
                    Campaign c;
                    c.algorithm = a;
                    c.problem = problem;
                    if (!dims_text.empty()) c.dims = parse_smd_dims(dims_text);
                    c.runs = runs;
                    c.base_seed = seed;
                    c.overrides = ConfigOverrides{accuracy, alpha_stop, k, budget};
                    c.out_dir = out_dir;
                    c.threads = threads;
                    auto records = run_campaign(c);
                    int ok = 0;
                    for (const auto& r : records) ok += r.success;
                    std::cerr << c.label() << ' ' << to_string(a) << ": " << ok << '/' << runs
                              << " successful\n";
                    all.insert(all.end(), records.begin(), records.end());
                }
            }
            std::cout << summarize(all).to_markdown();
            return 0;
        }

        if (*table) {
            const auto records = load_records(out_dir);
            const SummaryTable t = summarize(records, reference);
            std::ofstream(std::filesystem::path(out_dir) / "summary.csv") << t.to_csv();
            std::ofstream(std::filesystem::path(out_dir) / "summary.md") << t.to_markdown();
            std::cout << t.to_markdown();
            return 0;
        }

        if (*plots) {
            const auto records = load_records(out_dir);
            const std::filesystem::path dest =
                plot_dir.empty() ? std::filesystem::path(out_dir) / "plots" : std::filesystem::path(plot_dir);
            const PlotFiles files = emit_plot_data(records, dest);
            std::cout << files.bars.size() << " bar file(s), " << files.error_series.size()
                      << " error series in " << dest.string() << '\n';
            if (!files.notice.empty()) std::cerr << files.notice << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
