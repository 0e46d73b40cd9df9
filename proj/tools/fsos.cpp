#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fsos/ablation.hpp"
#include "fsos/checkpoint.hpp"
#include "fsos/data.hpp"
#include "fsos/error.hpp"
#include "fsos/evaluation.hpp"
#include "fsos/report.hpp"
#include "fsos/training.hpp"

namespace fs = std::filesystem;
using namespace fsos;

namespace {

struct GenerateArgs {
    std::string out;
    SyntheticSpec spec;
    std::string image;  // "CxHxW", empty for vector inputs
};

struct TrainArgs {
    std::string method;
    std::string dataset;
    std::string backbone;
    std::string out;
    std::string loss_csv;
    std::size_t episodes = 2000;
    std::string optimizer = "adam";
    std::optional<double> lr;
    std::optional<double> offset_lr;
    std::size_t n = 5, k = 5, q = 15;
    std::size_t validate_every = 100;
    std::size_t validation_episodes = 40;
    std::uint64_t seed = 1;
    std::string ocml_arch;
    bool joint_ce = true;
    std::string blocks;
};

struct EvalArgs {
    std::string task = "openset";
    std::string head;
    std::string checkpoint;
    std::string dataset;
    std::optional<std::size_t> n;
    std::size_t k = 5, q = 15;
    std::optional<std::size_t> n_unknown;
    std::size_t episodes = 10000;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string split = "test";
    std::size_t calibration_episodes = 100;
    std::string out;
    std::string csv;
};

struct AblateArgs {
    std::string grid;
    std::string task = "openset";
    std::optional<std::string> values;
    std::string heads = "mbce,ocml,threshold";
    std::string ocml_method = "ocml-frozen";
    std::string dataset;
    std::string backbone;
    std::size_t base_episodes = 2000;
    std::size_t head_episodes = 2000;
    std::size_t eval_episodes = 1000;
    std::size_t n = 5, k = 5, q = 15, n_unknown = 5;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::size_t calibration_episodes = 100;
    std::string out_dir;
};

struct ReportArgs {
    std::vector<std::string> inputs;
    std::string labels;
    std::string out;
    std::string csv;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

std::size_t parse_count(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const auto v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": '" + text + "' is not a non-negative integer");
    }
}

// Every option of a subcommand with its effective value, for report echoes.
std::map<std::string, std::string> echo_options(const CLI::App& sub) {
    std::map<std::string, std::string> out;
    for (const CLI::Option* opt : sub.get_options()) {
        const auto& names = opt->get_lnames();
        if (names.empty() || names.front() == "help") continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
        } else {
            value = opt->get_default_str();
        }
        out[names.front()] = value;
    }
    return out;
}

// Required keys are checked after parsing so they may come from the config file.
void require(const std::string& value, const std::string& key) {
    if (value.empty()) throw ConfigError("missing required key '" + key + "' (--" + key + " or in the config file)");
}

void ensure_parent(const std::string& path) {
    const fs::path parent = fs::path(path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec || !fs::is_directory(parent)) throw ConfigError("cannot create output directory " + parent.string());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path);
}

std::string read_text(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return {bytes.begin(), bytes.end()};
}

std::string file_checksum(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return checksum_hex(crc32_of(bytes));
}

std::string sibling(const std::string& path, const std::string& suffix) {
    fs::path p(path);
    return (p.parent_path() / (p.stem().string() + suffix)).string();
}

int run_generate(const GenerateArgs& a) {
    require(a.out, "out");
    SyntheticSpec spec = a.spec;
    if (!a.image.empty()) {
        std::vector<std::size_t> d;
        std::istringstream in(a.image);
        std::string part;
        while (std::getline(in, part, 'x')) d.push_back(parse_count(part, "image"));
        if (d.size() != 3) throw ConfigError("image: expected CxHxW, got '" + a.image + "'");
        spec.input = InputShape::image(d[0], d[1], d[2]);
    } else {
        spec.input = InputShape::vector(spec.dim);
    }
    spec.validate();
    if (fs::path(a.out).extension() != ".json") throw ConfigError("out: manifest path must end in .json");
    ensure_parent(a.out);

    const auto dataset = generate_synthetic(spec);
    const auto crc = save_dataset(dataset, a.out);
    const auto sizes = spec.split_sizes();
    std::cout << "dataset " << a.out << '\n'
              << "classes " << spec.num_classes << " (train " << sizes[0] << ", val " << sizes[1] << ", test " << sizes[2] << ")\n"
              << "checksum " << checksum_hex(crc) << '\n';
    return 0;
}

int run_train(const TrainArgs& a) {
    require(a.method, "method");
    require(a.dataset, "dataset");
    require(a.out, "out");
    const Method method = parse_method(a.method);
    if (needs_base_backbone(method) && a.backbone.empty()) {
        throw ConfigError("method " + a.method + " augments a trained backbone; pass --backbone <checkpoint>");
    }
    Schedule schedule = default_schedule(method);
    schedule.episodes = a.episodes;
    schedule.optimizer = parse_optimizer_kind(a.optimizer);
    if (a.lr) schedule.learning_rate = *a.lr;
    if (a.offset_lr) schedule.offset_learning_rate = *a.offset_lr;
    schedule.shape = {a.n, a.k, a.q, 0};
    schedule.validate_every = a.validate_every;
    schedule.validation_episodes = a.validation_episodes;
    schedule.seed = a.seed;
    schedule.validate();

    TrainingOptions options;
    if (!a.ocml_arch.empty()) options.ocml_arch = TransferArchitecture::parse(a.ocml_arch);
    options.joint_closed_set_loss = a.joint_ce;
    const std::string loss_csv = a.loss_csv.empty() ? sibling(a.out, ".loss.csv") : a.loss_csv;
    ensure_parent(a.out);
    ensure_parent(loss_csv);

    const Dataset dataset = load_dataset(a.dataset);
    if (!a.blocks.empty()) {
        BackboneSpec spec = default_backbone_spec(dataset.input());
        spec.blocks = BackboneSpec::parse_blocks(a.blocks);
        spec.embed_dim = spec.computed_embed_dim();
        spec.validate();
        options.backbone = spec;
    }
    std::optional<Model> base;
    if (!a.backbone.empty()) base = load_model(a.backbone);

    const auto result = run_meta_training(method, dataset, schedule, options, base ? &*base : nullptr);
    save_model(result.model, a.out);

    std::ostringstream csv;
    csv.precision(17);
    csv << "episode,loss,val_loss\n";
    std::size_t v = 0;
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
        csv << i + 1 << ',' << result.loss_curve[i] << ',';
        if (v < result.validation.size() && result.validation[v].episode == i + 1) csv << result.validation[v++].loss;
        csv << '\n';
    }
    write_text(loss_csv, csv.str());

    std::cout << "checkpoint " << a.out << '\n'
              << "loss_curve " << loss_csv << '\n'
              << "best_episode " << result.best_episode << '\n'
              << "checksum " << file_checksum(a.out) << '\n';
    return 0;
}

std::string infer_head(const Model& model) {
    if (model.mbce) return "mbce";
    if (model.ocml) return "ocml";
    return "threshold";
}

int run_eval(const EvalArgs& a, const CLI::App& sub) {
    require(a.checkpoint, "checkpoint");
    require(a.dataset, "dataset");
    require(a.out, "out");
    if (a.task != "openset" && a.task != "oneclass") throw ConfigError("task must be openset or oneclass, got '" + a.task + "'");
    const bool oneclass = a.task == "oneclass";
    EvaluationConfig config;
    config.shape.n = a.n.value_or(oneclass ? 1 : 5);
    config.shape.k = a.k;
    config.shape.q = a.q;
    config.shape.n_unknown = a.n_unknown.value_or(oneclass ? 1 : 5);
    config.episodes = a.episodes;
    config.seed = a.seed;
    config.workers = a.workers;
    config.split = parse_split_part(a.split);
    if (oneclass && config.shape.n != 1) throw ConfigError("task oneclass needs n = 1, got n = " + std::to_string(config.shape.n));
    config.validate();
    const std::string csv_path = a.csv.empty() ? sibling(a.out, ".csv") : a.csv;
    ensure_parent(a.out);
    ensure_parent(csv_path);

    const Model model = load_model(a.checkpoint);
    const std::string head = a.head.empty() ? infer_head(model) : a.head;
    std::unique_ptr<OpenSetGate> gate;
    std::optional<ThresholdBaseline> tau;
    if (head == "mbce" || head == "mbce-c") {
        if (!model.mbce) throw ConfigError("head " + head + " needs a Meta-BCE checkpoint, got method " + to_string(model.method));
        gate = std::make_unique<MetaBceGate>(*model.mbce);
        if (gate->name() != head) throw ConfigError("head " + head + " does not match checkpoint variant " + gate->name());
    } else if (head == "ocml") {
        if (!model.ocml) throw ConfigError("head ocml needs an OCML checkpoint, got method " + to_string(model.method));
        gate = std::make_unique<OcmlGate>(*model.ocml);
    } else if (head != "threshold") {
        throw ConfigError("unknown head '" + head + "' (expected mbce, mbce-c, ocml or threshold)");
    }

    const Dataset dataset = load_dataset(a.dataset);
    if (!gate) {
        if (a.calibration_episodes == 0) throw ConfigError("calibration_episodes must be >= 1");
        tau = calibrate_threshold(model.backbone, dataset, config.shape, a.calibration_episodes, config.seed);
        gate = std::make_unique<ThresholdGate>(*tau);
    }

    EvaluationReport report = oneclass ? evaluate_oneclass(*gate, model.backbone, dataset, config)
                                       : evaluate_openset(ProtoNetClassifier{}, *gate, model.backbone, dataset, config);
    report.echo = echo_options(sub);
    // Worker count never changes results, so it stays out of the report.
    report.echo.erase("workers");
    report.echo["n"] = std::to_string(config.shape.n);
    report.echo["n_unknown"] = std::to_string(config.shape.n_unknown);
    report.echo["csv"] = csv_path;
    report.echo["head"] = head;
    report.echo["checkpoint_method"] = to_string(model.method);
    report.echo["checkpoint_checksum"] = file_checksum(a.checkpoint);
    report.echo["dataset_checksum"] = checksum_hex(dataset.manifest().checksum);
    if (tau) {
        std::ostringstream os;
        os.precision(17);
        os << tau->tau;
        report.echo["threshold_tau"] = os.str();
    }
    write_text(a.out, report.to_json());
    write_text(csv_path, report.to_csv());

    std::cout << merge_reports(std::span(&report, 1)).to_text();
    if (report.degenerate_ci) std::cout << "note: a single episode gives no confidence interval\n";
    return 0;
}

std::vector<std::size_t> default_grid_values(AblationGrid grid) {
    switch (grid) {
        case AblationGrid::kshot: return {1, 2, 3, 5, 10, 20};
        case AblationGrid::nway: return {2, 3, 5, 10};
        case AblationGrid::gtheta:
        case AblationGrid::mbce_variant: return {1, 2, 5, 10};
    }
    return {};
}

int run_ablate(const AblateArgs& a, const CLI::App& sub) {
    require(a.grid, "grid");
    require(a.dataset, "dataset");
    require(a.out_dir, "out_dir");
    AblationConfig config;
    config.grid = parse_ablation_grid(a.grid);
    config.task = a.task;
    if (a.values) {
        for (const auto& v : split_list(*a.values)) config.values.push_back(parse_count(v, "values"));
    } else {
        config.values = default_grid_values(config.grid);
    }
    config.heads = split_list(a.heads);
    config.ocml_method = parse_method(a.ocml_method);
    config.base_schedule = default_schedule(Method::protonet);
    config.base_schedule.episodes = a.base_episodes;
    config.base_schedule.seed = a.seed;
    config.head_schedule = default_schedule(Method::mbce);
    config.head_schedule.episodes = a.head_episodes;
    config.head_schedule.seed = a.seed;
    // Training episodes use the evaluation shape; one-class grids still train n-way.
    config.base_schedule.shape = config.head_schedule.shape = {a.n, a.k, a.q, 0};
    config.eval.shape = {a.n, a.k, a.q, a.n_unknown};
    config.eval.episodes = a.eval_episodes;
    config.eval.seed = a.seed;
    config.eval.workers = a.workers;
    config.calibration_episodes = a.calibration_episodes;
    config.validate();
    config.base_schedule.validate();
    std::error_code ec;
    fs::create_directories(a.out_dir, ec);
    if (ec || !fs::is_directory(a.out_dir)) throw ConfigError("cannot create output directory " + a.out_dir);

    const Dataset dataset = load_dataset(a.dataset);
    std::optional<Model> base;
    if (!a.backbone.empty()) base = load_model(a.backbone);
    const auto result = run_ablation(config, dataset, base ? &*base : nullptr);

    const std::string stem = to_string(config.grid) + "_" + config.task;
    for (const auto& [metric, csv] : result.curves()) {
        const auto path = (fs::path(a.out_dir) / (stem + "_" + metric + ".csv")).string();
        write_text(path, csv);
        std::cout << "curve " << path << '\n';
    }
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : result.rows) {
        nlohmann::ordered_json m = nlohmann::ordered_json::object();
        for (const auto& s : r.metrics) m[s.name] = {{"mean", s.mean}, {"ci", s.ci}};
        rows.push_back({{"series", r.series}, {result.grid_axis, r.grid_value}, {"metrics", m}});
    }
    auto echo = echo_options(sub);
    echo.erase("workers");
    echo["dataset_checksum"] = checksum_hex(dataset.manifest().checksum);
    if (!a.backbone.empty()) echo["backbone_checksum"] = file_checksum(a.backbone);
    nlohmann::ordered_json summary = {{"format", "fsos-ablation"}, {"version", 1},         {"tool", kToolVersion},
                                      {"grid", to_string(config.grid)}, {"task", config.task}, {"echo", echo},
                                      {"rows", rows}};
    const auto path = (fs::path(a.out_dir) / (stem + ".json")).string();
    write_text(path, summary.dump(2) + "\n");
    std::cout << "summary " << path << '\n';
    return 0;
}

int run_report(const ReportArgs& a) {
    const auto labels = split_list(a.labels);
    if (!labels.empty() && labels.size() != a.inputs.size()) {
        throw ConfigError("labels: " + std::to_string(labels.size()) + " labels for " + std::to_string(a.inputs.size()) + " reports");
    }
    if (!a.out.empty()) ensure_parent(a.out);
    if (!a.csv.empty()) ensure_parent(a.csv);
    std::vector<EvaluationReport> reports;
    for (const auto& path : a.inputs) reports.push_back(report_from_json(read_text(path)));
    const auto table = merge_reports(reports, labels);
    const auto text = table.to_text();
    if (!a.out.empty()) write_text(a.out, text);
    if (!a.csv.empty()) write_text(a.csv, table.to_csv());
    std::cout << text;
    return 0;
}

int fail(const std::string& kind, const std::string& message, int code) {
    std::string line = message;
    for (auto& c : line) {
        if (c == '\n') c = ' ';
    }
    std::cerr << "fsos: error: " << kind << ": " << line << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot one-class and open-set meta-learning", "fsos"};
    app.set_config("--config", "", "INI file with one [section] per command");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1, 1);
    app.fallthrough();
    app.set_version_flag("--version", kToolVersion);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic class-disjoint dataset (manifest + payload)");
    g->add_option("--out", gen.out, "Manifest path (.json); the payload goes next to it");
    g->add_option("--num_classes", gen.spec.num_classes)->capture_default_str();
    g->add_option("--examples_per_class", gen.spec.examples_per_class)->capture_default_str();
    g->add_option("--dim", gen.spec.dim)->capture_default_str();
    g->add_option("--separation", gen.spec.separation)->capture_default_str();
    g->add_option("--spread", gen.spec.spread)->capture_default_str();
    g->add_option("--seed", gen.spec.seed)->capture_default_str();
    g->add_option("--train_classes", gen.spec.train_classes, "0 for all three split sizes derives 64/16/20 percent")
        ->capture_default_str();
    g->add_option("--val_classes", gen.spec.val_classes)->capture_default_str();
    g->add_option("--test_classes", gen.spec.test_classes)->capture_default_str();
    g->add_option("--image", gen.image, "Interpret each example as a CxHxW image");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Episodic meta-training; writes a checkpoint and a loss curve CSV");
    t->add_option("--method", tr.method, "protonet, mbce, mbce-c, ocml-joint or ocml-frozen");
    t->add_option("--dataset", tr.dataset, "Dataset manifest")->check(CLI::ExistingFile);
    t->add_option("--backbone", tr.backbone, "Trained checkpoint to augment (mbce, mbce-c, ocml-frozen)")->check(CLI::ExistingFile);
    t->add_option("--out", tr.out, "Checkpoint path");
    t->add_option("--loss_csv", tr.loss_csv, "Loss curve path (default: <out stem>.loss.csv)");
    t->add_option("--episodes", tr.episodes)->capture_default_str();
    t->add_option("--optimizer", tr.optimizer, "adam or sgd")->capture_default_str();
    t->add_option("--lr", tr.lr, "Learning rate (default: 1e-3 for protonet, 1e-4 for heads)");
    t->add_option("--offset_lr", tr.offset_lr, "Learning rate of the Meta-BCE offset t (default 0.1)");
    t->add_option("--n", tr.n)->capture_default_str();
    t->add_option("--k", tr.k)->capture_default_str();
    t->add_option("--q", tr.q)->capture_default_str();
    t->add_option("--validate_every", tr.validate_every, "0 keeps the final parameters")->capture_default_str();
    t->add_option("--validation_episodes", tr.validation_episodes)->capture_default_str();
    t->add_option("--seed", tr.seed)->capture_default_str();
    t->add_option("--ocml_arch", tr.ocml_arch, "Transfer module widths, e.g. 64-64 or 64-20-64");
    t->add_option("--joint_ce", tr.joint_ce, "ocml-joint: add the closed-set loss")->capture_default_str();
    t->add_option("--blocks", tr.blocks, "Backbone blocks for protonet/ocml-joint, e.g. dense:64,dense:64");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a head on test episodes; writes a report JSON and per-episode CSV");
    e->add_option("--task", ev.task, "openset or oneclass")->capture_default_str();
    e->add_option("--head", ev.head, "mbce, mbce-c, ocml or threshold (default: from the checkpoint)");
    e->add_option("--checkpoint", ev.checkpoint)->check(CLI::ExistingFile);
    e->add_option("--dataset", ev.dataset)->check(CLI::ExistingFile);
    e->add_option("--n", ev.n, "Known classes (default 5, 1 for oneclass)");
    e->add_option("--k", ev.k)->capture_default_str();
    e->add_option("--q", ev.q)->capture_default_str();
    e->add_option("--n_unknown", ev.n_unknown, "Unknown classes (default 5, 1 for oneclass)");
    e->add_option("--episodes", ev.episodes)->capture_default_str();
    e->add_option("--seed", ev.seed)->capture_default_str();
    e->add_option("--workers", ev.workers)->capture_default_str();
    e->add_option("--split", ev.split, "test or val")->capture_default_str();
    e->add_option("--calibration_episodes", ev.calibration_episodes, "Threshold head only")->capture_default_str();
    e->add_option("--out", ev.out, "Report JSON path");
    e->add_option("--csv", ev.csv, "Per-episode CSV path (default: <out stem>.csv)");

    AblateArgs ab;
    auto* b = app.add_subcommand("ablate", "Train and evaluate over a grid; writes one CSV curve per metric");
    b->add_option("--grid", ab.grid, "gtheta, kshot, nway or mbce_variant");
    b->add_option("--task", ab.task, "openset or oneclass")->capture_default_str();
    b->add_option("--values", ab.values, "Comma-separated k (or n for nway) values");
    b->add_option("--heads", ab.heads, "kshot/nway series")->capture_default_str();
    b->add_option("--ocml_method", ab.ocml_method)->capture_default_str();
    b->add_option("--dataset", ab.dataset)->check(CLI::ExistingFile);
    b->add_option("--backbone", ab.backbone, "Trained protonet checkpoint (default: train one)")->check(CLI::ExistingFile);
    b->add_option("--base_episodes", ab.base_episodes)->capture_default_str();
    b->add_option("--head_episodes", ab.head_episodes)->capture_default_str();
    b->add_option("--eval_episodes", ab.eval_episodes)->capture_default_str();
    b->add_option("--n", ab.n)->capture_default_str();
    b->add_option("--k", ab.k)->capture_default_str();
    b->add_option("--q", ab.q)->capture_default_str();
    b->add_option("--n_unknown", ab.n_unknown)->capture_default_str();
    b->add_option("--seed", ab.seed)->capture_default_str();
    b->add_option("--workers", ab.workers)->capture_default_str();
    b->add_option("--calibration_episodes", ab.calibration_episodes)->capture_default_str();
    b->add_option("--out_dir", ab.out_dir);

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Merge report JSONs into one comparison table");
    r->add_option("inputs", rp.inputs, "Report JSON files")->required()->check(CLI::ExistingFile);
    r->add_option("--labels", rp.labels, "Comma-separated row labels");
    r->add_option("--out", rp.out, "Text table path");
    r->add_option("--csv", rp.csv, "CSV table path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& s) {
        return app.exit(s);
    } catch (const CLI::ParseError& err) {
        return fail("usage", err.what(), 1);
    }

    try {
        if (g->parsed()) return run_generate(gen);
        if (t->parsed()) return run_train(tr);
        if (e->parsed()) return run_eval(ev, *e);
        if (b->parsed()) return run_ablate(ab, *b);
        if (r->parsed()) return run_report(rp);
        return fail("usage", "no command given", 1);
    } catch (const ConfigError& err) {
        return fail(err.kind(), err.what(), 1);
    } catch (const Error& err) {
        return fail(err.kind(), err.what(), 2);
    } catch (const std::exception& err) {
        return fail("runtime", err.what(), 2);
    }
}
