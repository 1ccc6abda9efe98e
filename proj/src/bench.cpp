#include "bilevel/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace bilevel {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const Vector& v) {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) out += ' ';
        out += num(v[i]);
    }
    return out;
}

Vector split_numbers(const std::string& text) {
    std::istringstream in(text);
    std::vector<double> values;
    std::string tok;
    while (in >> tok) values.push_back(std::stod(tok));
    Vector v(static_cast<Eigen::Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Eigen::Index>(i)] = values[i];
    return v;
}

std::string optional_num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::optional<double> parse_optional(const std::string& s) {
    if (s == "NA" || s.empty()) return std::nullopt;
    return std::stod(s);
}

std::string sanitize(std::string s) {
    for (char& c : s)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return s;
}

TerminatedBy parse_terminated(const std::string& s) {
    for (auto t : {TerminatedBy::Accuracy, TerminatedBy::Variance, TerminatedBy::Budget,
                   TerminatedBy::Generations, TerminatedBy::Aborted})
        if (to_string(t) == s) return t;
    throw UsageError("unknown termination reason '" + s + "'");
}

Mapping parse_mapping(const std::string& s) {
    for (auto m : {Mapping::None, Mapping::Psi, Mapping::Phi})
        if (to_string(m) == s) return m;
    throw UsageError("unknown mapping '" + s + "'");
}

std::string dims_text(const SmdDims& d) {
    std::string s = std::to_string(d.p) + "," + std::to_string(d.q) + "," + std::to_string(d.r);
    if (d.s > 0) s += "," + std::to_string(d.s);
    return s;
}

std::string cell(const std::optional<std::uint64_t>& v) { return v ? std::to_string(*v) : "-"; }

}  // namespace

std::string_view to_string(Algorithm algorithm) {
    switch (algorithm) {
        case Algorithm::Nested: return "nested";
        case Algorithm::PsiAppx: return "psi-appx";
        case Algorithm::PhiAppx: return "phi-appx";
        case Algorithm::Bleaq2: return "bleaq2";
    }
    return "?";
}

Algorithm parse_algorithm(std::string_view name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (Algorithm a : all_algorithms())
        if (to_string(a) == lower) return a;
    throw UsageError("unknown algorithm '" + std::string(name) +
                     "' (expected nested, psi-appx, phi-appx or bleaq2)");
}

std::vector<Algorithm> all_algorithms() {
    return {Algorithm::Nested, Algorithm::PsiAppx, Algorithm::PhiAppx, Algorithm::Bleaq2};
}

std::string Campaign::label() const {
    if (!dims) return problem;
    return problem + "[" + dims_text(*dims) + "]";
}

BleaqConfig Campaign::config() const {
    BleaqConfig c = algorithm == Algorithm::Bleaq2 ? BleaqConfig::bleaq2_default()
                                                   : BleaqConfig::nested_default();
    if (overrides.accuracy) c.accuracy_target = *overrides.accuracy;
    if (overrides.alpha_stop) {
        c.ea.alpha_stop = *overrides.alpha_stop;
        c.lower_ea.alpha_stop = *overrides.alpha_stop;
    }
    if (overrides.local_search_every_k) c.local_search_every_k = *overrides.local_search_every_k;
    if (overrides.max_ll_calls) c.max_ll_calls = *overrides.max_ll_calls;
    return c;
}

void Campaign::validate() const {
    if (runs < 1) throw UsageError("runs must be at least 1");
    if (threads < 0) throw UsageError("threads must be non-negative");
    const BilevelProblem p = registry_lookup(problem, dims);
    config().validate(p.n);
}

nlohmann::json Campaign::to_json() const {
    nlohmann::json j;
    j["format_version"] = kRecordVersion;
    j["algorithm"] = std::string(to_string(algorithm));
    j["problem"] = problem;
    j["dims"] = dims ? nlohmann::json(dims_text(*dims)) : nlohmann::json(nullptr);
    j["runs"] = runs;
    j["base_seed"] = base_seed;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < runs; ++i) seeds.push_back(seed_for(i));
    j["seeds"] = seeds;
    nlohmann::json o = nlohmann::json::object();
    if (overrides.accuracy) o["accuracy"] = *overrides.accuracy;
    if (overrides.alpha_stop) o["alpha_stop"] = *overrides.alpha_stop;
    if (overrides.local_search_every_k) o["k"] = *overrides.local_search_every_k;
    if (overrides.max_ll_calls) o["budget"] = *overrides.max_ll_calls;
    j["overrides"] = o;
    return j;
}

Campaign Campaign::from_json(const nlohmann::json& j) {
    Campaign c;
    c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    c.problem = j.at("problem").get<std::string>();
    if (j.contains("dims") && !j["dims"].is_null()) c.dims = parse_smd_dims(j["dims"].get<std::string>());
    c.runs = j.at("runs").get<int>();
    c.base_seed = j.at("base_seed").get<std::uint64_t>();
    if (j.contains("overrides")) {
        const auto& o = j["overrides"];
        if (o.contains("accuracy")) c.overrides.accuracy = o["accuracy"].get<double>();
        if (o.contains("alpha_stop")) c.overrides.alpha_stop = o["alpha_stop"].get<double>();
        if (o.contains("k")) c.overrides.local_search_every_k = o["k"].get<int>();
        if (o.contains("budget")) c.overrides.max_ll_calls = o["budget"].get<std::uint64_t>();
    }
    return c;
}

RunRecord run_single(const Campaign& campaign, int run) {
    const std::uint64_t seed = campaign.seed_for(run);
    RunRecord rec;
    try {
        const BilevelProblem problem = registry_lookup(campaign.problem, campaign.dims);
        const BleaqConfig config = campaign.config();
        EvalCounter counter;
        Rng rng(seed);
        switch (campaign.algorithm) {
            case Algorithm::Bleaq2: rec = bleaq2_solve(problem, config, counter, rng); break;
            case Algorithm::Nested:
                rec = nested_solve(problem, config, NestedMode::Plain, counter, rng);
                break;
            case Algorithm::PsiAppx:
                rec = nested_solve(problem, config, NestedMode::PsiLocal, counter, rng);
                break;
            case Algorithm::PhiAppx:
                rec = nested_solve(problem, config, NestedMode::PhiLocal, counter, rng);
                break;
        }
    } catch (const std::exception& e) {
        rec = RunRecord{};
        rec.terminated_by = TerminatedBy::Aborted;
        rec.success = false;
        rec.diagnostic = e.what();
    }
    rec.problem = campaign.label();
    rec.algorithm = std::string(to_string(campaign.algorithm));
    rec.seed = seed;
    return rec;
}

std::vector<RunRecord> run_campaign(const Campaign& campaign) {
    campaign.validate();
    std::vector<RunRecord> records(static_cast<std::size_t>(campaign.runs));
    int workers = campaign.threads == 0 ? static_cast<int>(std::thread::hardware_concurrency())
                                        : campaign.threads;
    workers = std::clamp(workers, 1, campaign.runs);

    std::atomic<int> next{0};
    auto work = [&] {
        for (int i = next++; i < campaign.runs; i = next++) records[static_cast<std::size_t>(i)] = run_single(campaign, i);
    };
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    if (!campaign.out_dir.empty()) {
        std::filesystem::create_directories(campaign.out_dir);
        for (const auto& r : records) write_record(r, campaign.out_dir);
        const std::string name =
            "manifest_" + campaign.label() + "_" + std::string(to_string(campaign.algorithm)) + ".json";
        std::ofstream(campaign.out_dir / name) << campaign.to_json().dump(2) << '\n';
    }
    return records;
}

std::string format_record(const RunRecord& r) {
    std::ostringstream out;
    out << "# bilevel-run-record " << kRecordVersion << '\n';
    auto kv = [&](const char* key, const std::string& value) { out << key << '\t' << value << '\n'; };
    kv("problem", r.problem);
    kv("algorithm", r.algorithm);
    kv("seed", std::to_string(r.seed));
    kv("terminated_by", std::string(to_string(r.terminated_by)));
    kv("success", r.success ? "1" : "0");
    kv("generations", std::to_string(r.generations));
    kv("ul_evals", std::to_string(r.counter.ul_evals));
    kv("ll_evals", std::to_string(r.counter.ll_evals));
    kv("psi_decisions", std::to_string(r.psi_decisions));
    kv("phi_decisions", std::to_string(r.phi_decisions));
    kv("best_F", num(r.best.F));
    kv("best_f", num(r.best.f));
    kv("best_ul_violation", num(r.best.ul_violation));
    kv("best_ll_violation", num(r.best.ll_violation));
    kv("best_tag", r.best.tag == Tag::Tag1 ? "1" : "0");
    kv("best_xu", join(r.best.xu));
    kv("best_xl", join(r.best.xl));
    kv("diagnostic", sanitize(r.diagnostic));
    out << "trace\tgen\tbest_F\te_mse_psi\te_mse_phi\tchosen_mapping\tprediction_error\n";
    for (const auto& t : r.trace)
        out << t.gen << '\t' << num(t.best_F) << '\t' << optional_num(t.e_mse_psi) << '\t'
            << optional_num(t.e_mse_phi) << '\t' << to_string(t.chosen_mapping) << '\t'
            << optional_num(t.prediction_error) << '\n';
    return out.str();
}

RunRecord parse_record(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("# bilevel-run-record ", 0) != 0)
        throw UsageError("not a run record");
    const int version = std::stoi(line.substr(std::string("# bilevel-run-record ").size()));
    if (version != kRecordVersion)
        throw UsageError("unsupported record version " + std::to_string(version));

    RunRecord r;
    bool in_trace = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::string col;
        std::istringstream ls(line);
        while (std::getline(ls, col, '\t')) cols.push_back(col);
        if (line.back() == '\t') cols.emplace_back();
        if (in_trace) {
            if (cols.size() != 6) throw UsageError("malformed trace row: " + line);
            TraceEntry t;
            t.gen = std::stoi(cols[0]);
            t.best_F = std::stod(cols[1]);
            t.e_mse_psi = parse_optional(cols[2]);
            t.e_mse_phi = parse_optional(cols[3]);
            t.chosen_mapping = parse_mapping(cols[4]);
            t.prediction_error = parse_optional(cols[5]);
            r.trace.push_back(t);
            continue;
        }
        const std::string& key = cols[0];
        const std::string value = cols.size() > 1 ? cols[1] : std::string();
        if (key == "trace") in_trace = true;
        else if (key == "problem") r.problem = value;
        else if (key == "algorithm") r.algorithm = value;
        else if (key == "seed") r.seed = std::stoull(value);
        else if (key == "terminated_by") r.terminated_by = parse_terminated(value);
        else if (key == "success") r.success = value == "1";
        else if (key == "generations") r.generations = std::stoi(value);
        else if (key == "ul_evals") r.counter.ul_evals = std::stoull(value);
        else if (key == "ll_evals") r.counter.ll_evals = std::stoull(value);
        else if (key == "psi_decisions") r.psi_decisions = std::stoi(value);
        else if (key == "phi_decisions") r.phi_decisions = std::stoi(value);
        else if (key == "best_F") r.best.F = std::stod(value);
        else if (key == "best_f") r.best.f = std::stod(value);
        else if (key == "best_ul_violation") r.best.ul_violation = std::stod(value);
        else if (key == "best_ll_violation") r.best.ll_violation = std::stod(value);
        else if (key == "best_tag") r.best.tag = value == "1" ? Tag::Tag1 : Tag::Tag0;
        else if (key == "best_xu") r.best.xu = split_numbers(value);
        else if (key == "best_xl") r.best.xl = split_numbers(value);
        else if (key == "diagnostic") r.diagnostic = value;
    }
    return r;
}

std::string record_filename(const RunRecord& r) {
    return r.problem + "_" + r.algorithm + "_" + std::to_string(r.seed) + ".tsv";
}

void write_record(const RunRecord& record, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / record_filename(record), std::ios::binary);
    if (!out) throw UsageError("cannot write record into " + dir.string());
    out << format_record(record);
}

std::vector<RunRecord> load_records(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw UsageError("no such directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".tsv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    std::vector<RunRecord> records;
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::stringstream buf;
        buf << in.rdbuf();
        records.push_back(parse_record(buf.str()));
    }
    return records;
}

std::string Savings::text() const {
    switch (kind) {
        case Kind::Percent: {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.0f%%", percent);
            return buf;
        }
        case Kind::Large: return "Large";
        case Kind::Undefined: return "undefined";
        case Kind::Missing: return "-";
    }
    return "-";
}

Savings compute_savings(std::uint64_t candidate_total, std::uint64_t reference_total) {
    if (reference_total == 0) return Savings{Savings::Kind::Undefined, 0.0};
    const double ref = static_cast<double>(reference_total);
    return Savings{Savings::Kind::Percent, 100.0 * (ref - static_cast<double>(candidate_total)) / ref};
}

Savings compute_savings(std::optional<std::uint64_t> candidate_total,
                        std::optional<std::uint64_t> reference_total) {
    if (!candidate_total) return Savings{Savings::Kind::Missing, 0.0};
    if (!reference_total) return Savings{Savings::Kind::Large, 0.0};
    return compute_savings(*candidate_total, *reference_total);
}

namespace {

CellStats cell_stats(const std::vector<const RunRecord*>& runs) {
    CellStats c;
    c.runs = static_cast<int>(runs.size());
    std::vector<std::uint64_t> ul, ll;
    std::vector<std::pair<std::uint64_t, std::size_t>> totals;
    for (const RunRecord* r : runs) {
        if (!r->success) continue;
        ++c.successes;
        ul.push_back(r->counter.ul_evals);
        ll.push_back(r->counter.ll_evals);
        totals.emplace_back(r->counter.total(), totals.size());
    }
    if (c.successes == 0) return c;
    c.ul_min = *std::min_element(ul.begin(), ul.end());
    c.ul_max = *std::max_element(ul.begin(), ul.end());
    c.ul_med = lower_median(ul);
    c.ll_min = *std::min_element(ll.begin(), ll.end());
    c.ll_max = *std::max_element(ll.begin(), ll.end());
    c.ll_med = lower_median(ll);
    c.total_med = lower_median(totals).first;
    c.total_split = *c.ul_med + *c.ll_med;
    return c;
}

}  // namespace

SummaryTable summarize(const std::vector<RunRecord>& records, std::string reference) {
    SummaryTable table;
    std::vector<std::string> problems;
    std::map<std::pair<std::string, std::string>, std::vector<const RunRecord*>> groups;
    for (const auto& r : records) {
        if (std::find(problems.begin(), problems.end(), r.problem) == problems.end())
            problems.push_back(r.problem);
        if (std::find(table.algorithms.begin(), table.algorithms.end(), r.algorithm) ==
            table.algorithms.end())
            table.algorithms.push_back(r.algorithm);
        groups[{r.problem, r.algorithm}].push_back(&r);
    }
    // Fixed column order: known algorithms first in catalog order, then anything else as seen.
    std::vector<std::string> ordered;
    for (Algorithm a : all_algorithms()) {
        const std::string name(to_string(a));
        if (std::find(table.algorithms.begin(), table.algorithms.end(), name) != table.algorithms.end())
            ordered.push_back(name);
    }
    for (const auto& a : table.algorithms)
        if (std::find(ordered.begin(), ordered.end(), a) == ordered.end()) ordered.push_back(a);
    table.algorithms = ordered;

    if (reference.empty() && !table.algorithms.empty()) {
        const bool has_nested =
            std::find(table.algorithms.begin(), table.algorithms.end(), "nested") != table.algorithms.end();
        reference = has_nested ? "nested" : table.algorithms.front();
    }
    table.reference = reference;

    for (const auto& problem : problems) {
        SummaryRow row;
        row.problem = problem;
        for (const auto& a : table.algorithms) row.cells.push_back(cell_stats(groups[{problem, a}]));
        const auto ref_it = std::find(table.algorithms.begin(), table.algorithms.end(), reference);
        const std::optional<CellStats> ref =
            ref_it == table.algorithms.end()
                ? std::nullopt
                : std::optional<CellStats>(row.cells[static_cast<std::size_t>(ref_it - table.algorithms.begin())]);
        for (std::size_t i = 0; i < table.algorithms.size(); ++i) {
            if (!ref || table.algorithms[i] == reference || groups[{problem, reference}].empty()) {
                row.savings.push_back(Savings{Savings::Kind::Missing, 0.0});
                row.savings_split.push_back(Savings{Savings::Kind::Missing, 0.0});
                continue;
            }
            row.savings.push_back(compute_savings(row.cells[i].total_med, ref->total_med));
            row.savings_split.push_back(compute_savings(row.cells[i].total_split, ref->total_split));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

std::string SummaryTable::to_csv() const {
    std::ostringstream out;
    out << "problem,algorithm,runs,successes,ul_min,ul_med,ul_max,ll_min,ll_med,ll_max,total_med,"
           "total_split,savings_vs_"
        << reference << ",savings_split_vs_" << reference << '\n';
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < algorithms.size(); ++i) {
            const CellStats& c = row.cells[i];
            out << row.problem << ',' << algorithms[i] << ',' << c.runs << ',' << c.successes << ','
                << cell(c.ul_min) << ',' << cell(c.ul_med) << ',' << cell(c.ul_max) << ','
                << cell(c.ll_min) << ',' << cell(c.ll_med) << ',' << cell(c.ll_max) << ','
                << cell(c.total_med) << ',' << cell(c.total_split) << ',' << row.savings[i].text() << ','
                << row.savings_split[i].text() << '\n';
        }
    }
    return out.str();
}

std::string SummaryTable::to_markdown() const {
    std::ostringstream out;
    out << "| Problem |";
    for (const auto& a : algorithms) out << ' ' << a << " UL (min/med/max) | " << a << " LL (min/med/max) | " << a << " ok |";
    out << " Savings vs " << reference << " |\n|---|";
    for (std::size_t i = 0; i < algorithms.size(); ++i) out << "---|---|---|";
    out << "---|\n";
    for (const auto& row : rows) {
        out << "| " << row.problem << " |";
        std::string savings;
        for (std::size_t i = 0; i < algorithms.size(); ++i) {
            const CellStats& c = row.cells[i];
            if (c.ul_med)
                out << ' ' << *c.ul_min << '/' << *c.ul_med << '/' << *c.ul_max << " | " << *c.ll_min << '/'
                    << *c.ll_med << '/' << *c.ll_max << " |";
            else
                out << " - | - |";
            out << ' ' << c.successes << '/' << c.runs << " |";
            if (algorithms[i] == reference) continue;
            if (!savings.empty()) savings += ", ";
            savings += algorithms[i] + " " + row.savings[i].text();
        }
        out << ' ' << (savings.empty() ? "-" : savings) << " |\n";
    }
    return out.str();
}

PlotFiles emit_plot_data(const std::vector<RunRecord>& records, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    PlotFiles files;
    std::vector<std::string> problems;
    for (const auto& r : records)
        if (std::find(problems.begin(), problems.end(), r.problem) == problems.end()) problems.push_back(r.problem);

    for (const auto& problem : problems) {
        const auto path = dir / ("bars_" + problem + ".csv");
        std::ofstream out(path, std::ios::binary);
        out << "algorithm,seed,ul_evals,ll_evals,success\n";
        for (const auto& r : records)
            if (r.problem == problem)
                out << r.algorithm << ',' << r.seed << ',' << r.counter.ul_evals << ',' << r.counter.ll_evals
                    << ',' << (r.success ? 1 : 0) << '\n';
        files.bars.push_back(path);
    }

    std::size_t without_trace = 0;
    for (const auto& r : records) {
        if (r.trace.empty()) {
            ++without_trace;
            continue;
        }
        const auto path =
            dir / ("errors_" + r.problem + "_" + r.algorithm + "_" + std::to_string(r.seed) + ".csv");
        std::ofstream out(path, std::ios::binary);
        out << "gen,best_F,e_mse_psi,e_mse_phi,chosen_mapping,prediction_error\n";
        for (const auto& t : r.trace)
            out << t.gen << ',' << num(t.best_F) << ',' << optional_num(t.e_mse_psi) << ','
                << optional_num(t.e_mse_phi) << ',' << to_string(t.chosen_mapping) << ','
                << optional_num(t.prediction_error) << '\n';
        files.error_series.push_back(path);
    }
    if (without_trace > 0)
        files.notice = std::to_string(without_trace) + " record(s) carry no trace; only their counts were written";
    return files;
}

}  // namespace bilevel
