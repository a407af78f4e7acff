// Command-line front end: train the toy base model, fine-tune variants,
// craft adversarial images, and evaluate transfer.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sea/artifact_io.hpp"
#include "sea/attack.hpp"
#include "sea/evalkit.hpp"
#include "sea/synth.hpp"
#include "sea/train.hpp"
#include "sea/vlm.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sea;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitTargetFailure = 2;

std::string default_out_dir() {
    const char* env = std::getenv("SEA_OUT_DIR");
    return env != nullptr ? env : "runs";
}

// Accepts both "1/255" and plain decimals.
float parse_alpha(const std::string& text) {
    size_t slash = text.find('/');
    if (slash != std::string::npos) {
        double num = std::stod(text.substr(0, slash));
        double den = std::stod(text.substr(slash + 1));
        if (den == 0) throw CLI::ValidationError("--alpha", "division by zero");
        return float(num / den);
    }
    return std::stof(text);
}

attack::AttackMode parse_mode(const std::string& text, float& eps) {
    if (text == "unconstrained") return attack::AttackMode::Unconstrained;
    if (text.rfind("eps:", 0) == 0) {
        eps = std::stof(text.substr(4));
        return attack::AttackMode::EpsBall;
    }
    throw CLI::ValidationError("--mode", "expected 'unconstrained' or 'eps:<value>'");
}

vlm::Vlm load_model(const std::string& path) {
    vlm::Vlm model;
    model.cfg = vlm::VlmConfig{};
    model.params = io::load_checkpoint(path);
    return model;
}

std::string run_id(const std::string& command, uint64_t seed) {
    return command + "-" + std::to_string(seed) + "-" + io::timestamp_utc();
}

void finish_manifest(io::RunManifest& manifest, const std::string& out_dir) {
    manifest.finished_at = io::timestamp_utc();
    io::write_manifest(out_dir + "/manifest.json", manifest);
}

std::string format_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

json verdicts_json(const std::vector<evalkit::EvalReport>& reports, bool tpg) {
    json j;
    j["tpg"] = tpg;
    j["reports"] = json::array();
    for (const auto& r : reports) {
        json rep;
        rep["model_id"] = r.model_id;
        rep["n_goals"] = r.n_goals;
        rep["asr"] = r.asr;
        rep["nrr"] = r.nrr;
        rep["verdicts"] = json::array();
        for (const auto& v : r.verdicts) {
            rep["verdicts"].push_back({{"goal", v.goal},
                                       {"response", v.response},
                                       {"asr_hit", v.asr_hit},
                                       {"nrr_hit", v.nrr_hit}});
        }
        j["reports"].push_back(std::move(rep));
    }
    return j;
}

std::vector<attack::GoalTarget> load_goals_file(const std::string& path) {
    // reuse the pair validation from the corpora loader
    fs::path tmp = fs::temp_directory_path() / ("sea_goals_" + std::to_string(::getpid()) + ".txt");
    io::atomic_write(tmp.string(), "placeholder\n");
    attack::Corpora c = io::load_corpora(tmp.string(), path);
    fs::remove(tmp);
    return c.goal_targets;
}

int cmd_train_base(const std::string& out, uint64_t seed, int max_epochs) {
    train::BaseOptions opt;
    opt.seed = seed;
    if (max_epochs > 0) opt.max_epochs = max_epochs;

    io::RunManifest manifest;
    manifest.run_id = run_id("train-base", seed);
    manifest.seeds["base"] = seed;
    manifest.config["max_epochs"] = std::to_string(opt.max_epochs);
    manifest.config["lr"] = format_double(opt.lr);
    manifest.started_at = io::timestamp_utc();

    train::AlignmentMetrics metrics;
    try {
        vlm::Vlm base = train::make_base(vlm::VlmConfig{}, opt, &metrics);
        const std::string ckpt = out + "/base.ckpt";
        io::save_checkpoint(ckpt, base.params);
        manifest.output_files.push_back(ckpt);
        finish_manifest(manifest, out);
        std::cout << "base model ready: benign_answer_rate=" << metrics.benign_answer_rate
                  << " refusal_rate=" << metrics.refusal_rate << " epochs=" << metrics.epochs_run
                  << "\nwrote " << ckpt << "\n";
        return kExitOk;
    } catch (const std::runtime_error& e) {
        std::cerr << "alignment targets not reached: " << e.what() << "\n";
        return kExitTargetFailure;
    }
}

int cmd_finetune(const std::string& base_path, const std::string& variant,
                 const std::string& data, const std::string& out, uint64_t seed, int epochs,
                 double lr, int items) {
    train::FinetuneConfig cfg = train::FinetuneConfig::make(variant, data);
    if (epochs > 0) cfg.epochs = epochs;
    if (lr > 0) cfg.lr = float(lr);
    if (items > 0) cfg.items = items;

    const std::string ckpt = out + "/" + variant + "-" + data + ".ckpt";
    if (fs::exists(ckpt)) {
        std::cerr << "refusing to overwrite existing checkpoint " << ckpt << "\n";
        return kExitUsage;
    }

    io::RunManifest manifest;
    manifest.run_id = run_id("finetune", seed);
    manifest.seeds["finetune"] = seed;
    manifest.config["variant"] = variant;
    manifest.config["data"] = data;
    manifest.config["epochs"] = std::to_string(cfg.epochs);
    manifest.config["lr"] = format_double(cfg.lr);
    manifest.config["items"] = std::to_string(cfg.items);
    manifest.input_files.push_back(base_path);
    manifest.started_at = io::timestamp_utc();

    vlm::Vlm base = load_model(base_path);
    vlm::Vlm tuned = train::make_finetune_variant(base, cfg, seed);
    io::save_checkpoint(ckpt, tuned.params);
    manifest.output_files.push_back(ckpt);
    finish_manifest(manifest, out);
    std::cout << "wrote " << ckpt << "\n";
    return kExitOk;
}

int cmd_attack(const std::string& model_path, const std::string& harmful,
               const std::string& pairs, const std::string& out, attack::AttackConfig cfg,
               const std::string& clean_path) {
    io::RunManifest manifest;
    manifest.run_id = run_id("attack", cfg.seed);
    manifest.seeds["attack"] = cfg.seed;
    manifest.config["sigma"] = format_double(cfg.sigma);
    manifest.config["alpha"] = format_double(cfg.alpha);
    manifest.config["batch_size"] = std::to_string(cfg.batch_size);
    manifest.config["t1"] = std::to_string(cfg.t1_steps);
    manifest.config["t2"] = std::to_string(cfg.t2_steps);
    manifest.config["mode"] = cfg.mode == attack::AttackMode::Unconstrained
                                  ? "unconstrained"
                                  : "eps:" + format_double(cfg.eps);
    manifest.config["fts"] = cfg.fts_enabled ? "on" : "off";
    manifest.config["tpg"] = cfg.tpg_enabled ? "on" : "off";
    manifest.input_files = {model_path, harmful, pairs};
    manifest.started_at = io::timestamp_utc();

    vlm::Vlm model = load_model(model_path);
    attack::Corpora corpora = io::load_corpora(harmful, pairs);

    std::optional<num::Tensor> clean;
    if (!clean_path.empty()) {
        clean = io::load_tensor(clean_path);
        manifest.input_files.push_back(clean_path);
    }
    attack::AttackResult result =
        attack::run_sea(model, corpora, cfg, clean ? &*clean : nullptr);

    const std::string img = out + "/adv_image.seat";
    const std::string png = out + "/adv_image.png";
    const std::string trace = out + "/loss_trace.csv";
    const std::string cfg_file = out + "/attack_config.txt";
    io::save_tensor(img, result.image.pixels);
    io::export_png(png, result.image.pixels);
    std::string csv = "step,stage,loss\n";
    for (const auto& e : result.trace) {
        csv += std::to_string(e.step) + "," + std::to_string(e.stage) + "," +
               format_double(e.loss) + "\n";
    }
    io::atomic_write(trace, csv);
    std::string cfg_txt;
    for (const auto& [k, v] : manifest.config) cfg_txt += k + " = " + v + "\n";
    cfg_txt += "seed = " + std::to_string(cfg.seed) + "\n";
    io::atomic_write(cfg_file, cfg_txt);

    manifest.output_files = {img, png, trace, cfg_file};
    finish_manifest(manifest, out);
    std::cout << "wrote " << img << " (" << result.trace.size() << " steps)\n";
    return kExitOk;
}

int cmd_transfer(const std::string& image_path, const std::vector<std::string>& model_paths,
                 const std::string& goals_path, bool tpg, const std::string& out,
                 int max_tokens, const std::string& keywords_path) {
    io::RunManifest manifest;
    manifest.run_id = run_id("transfer", 0);
    manifest.config["tpg"] = tpg ? "on" : "off";
    manifest.config["max_tokens"] = std::to_string(max_tokens);
    manifest.input_files = model_paths;
    manifest.input_files.push_back(goals_path);
    manifest.started_at = io::timestamp_utc();

    std::optional<attack::AdversarialImage> image;
    if (!image_path.empty()) {
        image = attack::AdversarialImage{io::load_tensor(image_path)};
        manifest.input_files.push_back(image_path);
    }
    auto goals = load_goals_file(goals_path);
    evalkit::JudgeRule rule = keywords_path.empty()
                                  ? evalkit::default_rule()
                                  : evalkit::rule_from_keywords_file(keywords_path);
    if (!keywords_path.empty()) manifest.input_files.push_back(keywords_path);

    std::vector<vlm::Vlm> models;
    models.reserve(model_paths.size());
    for (const auto& path : model_paths) models.push_back(load_model(path));
    std::vector<std::pair<std::string, const vlm::Vlm*>> variants;
    for (size_t i = 0; i < models.size(); ++i) {
        variants.emplace_back(fs::path(model_paths[i]).stem().string(), &models[i]);
    }

    auto reports = evalkit::transfer_matrix(variants, image, goals, tpg, rule, max_tokens);

    const std::string csv = out + "/transfer.csv";
    const std::string md = out + "/transfer.md";
    const std::string verdicts = out + "/verdicts.json";
    io::atomic_write(csv, evalkit::reports_to_csv(reports));
    io::atomic_write(md, evalkit::reports_to_markdown(reports));
    io::atomic_write(verdicts, verdicts_json(reports, tpg).dump(2) + "\n");
    manifest.output_files = {csv, md, verdicts};
    finish_manifest(manifest, out);
    std::cout << evalkit::reports_to_markdown(reports);
    return kExitOk;
}

int cmd_evaluate(const std::string& model_path, const std::string& prompts_path,
                 const std::string& image_path, const std::string& lexicon_path,
                 double threshold, int max_tokens, const std::string& out) {
    io::RunManifest manifest;
    manifest.run_id = run_id("evaluate", 0);
    manifest.config["threshold"] = format_double(threshold);
    manifest.config["max_tokens"] = std::to_string(max_tokens);
    manifest.input_files = {model_path, prompts_path};
    manifest.started_at = io::timestamp_utc();

    vlm::Vlm model = load_model(model_path);
    std::vector<std::string> prompts;
    {
        std::istringstream in(io::read_file(prompts_path));
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) prompts.push_back(line);
        }
    }
    std::optional<attack::AdversarialImage> image;
    if (!image_path.empty()) {
        image = attack::AdversarialImage{io::load_tensor(image_path)};
        manifest.input_files.push_back(image_path);
    }
    evalkit::Lexicon lexicon = lexicon_path.empty() ? evalkit::default_lexicon()
                                                    : evalkit::load_lexicon(lexicon_path);
    if (!lexicon_path.empty()) manifest.input_files.push_back(lexicon_path);

    auto result = evalkit::continuation_eval(model, image, prompts, lexicon, threshold, max_tokens);

    const std::string csv = out + "/continuation.csv";
    const std::string md = out + "/continuation.md";
    const std::string records = out + "/records.json";
    io::atomic_write(csv, evalkit::continuation_to_csv(result));
    io::atomic_write(md, evalkit::continuation_to_markdown(result));
    json j;
    j["threshold"] = threshold;
    j["records"] = json::array();
    for (const auto& rec : result.records) {
        j["records"].push_back(
            {{"prompt", rec.prompt}, {"continuation", rec.continuation}, {"scores", rec.scores}});
    }
    io::atomic_write(records, j.dump(2) + "\n");
    manifest.output_files = {csv, md, records};
    finish_manifest(manifest, out);
    std::cout << evalkit::continuation_to_markdown(result);
    return kExitOk;
}

int cmd_report(const std::string& from, const std::string& out, const std::string& verify) {
    if (!verify.empty()) {
        auto drifted = io::verify_manifest(verify + "/manifest.json");
        if (drifted.empty()) {
            std::cout << "manifest clean: all artifact digests match\n";
            return kExitOk;
        }
        for (const auto& f : drifted) std::cout << "drifted: " << f << "\n";
        return kExitTargetFailure;
    }

    const std::string dst = out.empty() ? from : out;
    bool produced = false;
    const std::string verdicts_path = from + "/verdicts.json";
    if (fs::exists(verdicts_path)) {
        json j = json::parse(io::read_file(verdicts_path));
        std::vector<evalkit::EvalReport> reports;
        for (const auto& rep : j["reports"]) {
            evalkit::EvalReport r;
            r.model_id = rep["model_id"].get<std::string>();
            int asr = 0, nrr = 0;
            for (const auto& v : rep["verdicts"]) {
                evalkit::GoalVerdict gv{v["goal"].get<std::string>(),
                                        v["response"].get<std::string>(),
                                        v["asr_hit"].get<bool>(), v["nrr_hit"].get<bool>()};
                asr += gv.asr_hit ? 1 : 0;
                nrr += gv.nrr_hit ? 1 : 0;
                r.verdicts.push_back(std::move(gv));
            }
            r.n_goals = int(r.verdicts.size());
            r.asr = r.n_goals ? double(asr) / r.n_goals : 0.0;
            r.nrr = r.n_goals ? double(nrr) / r.n_goals : 0.0;
            reports.push_back(std::move(r));
        }
        io::atomic_write(dst + "/transfer.csv", evalkit::reports_to_csv(reports));
        io::atomic_write(dst + "/transfer.md", evalkit::reports_to_markdown(reports));
        std::cout << evalkit::reports_to_markdown(reports);
        produced = true;
    }
    const std::string records_path = from + "/records.json";
    if (fs::exists(records_path)) {
        json j = json::parse(io::read_file(records_path));
        std::vector<evalkit::ContinuationRecord> records;
        for (const auto& rec : j["records"]) {
            evalkit::ContinuationRecord r;
            r.prompt = rec["prompt"].get<std::string>();
            r.continuation = rec["continuation"].get<std::string>();
            for (const auto& [attr, score] : rec["scores"].items()) {
                r.scores[attr] = score.get<double>();
            }
            records.push_back(std::move(r));
        }
        auto result = evalkit::recount_continuations(records, j["threshold"].get<double>());
        io::atomic_write(dst + "/continuation.csv", evalkit::continuation_to_csv(result));
        io::atomic_write(dst + "/continuation.md", evalkit::continuation_to_markdown(result));
        std::cout << evalkit::continuation_to_markdown(result);
        produced = true;
    }
    if (!produced) {
        std::cerr << "nothing to report: no verdicts.json or records.json under " << from << "\n";
        return kExitUsage;
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale grey-box jailbreak laboratory for a toy vision-language model"};
    app.require_subcommand(1);
    app.set_config("--config")->configurable(false);
    app.allow_config_extras(false);

    // train-base
    auto* tb = app.add_subcommand("train-base", "Train the safety-aligned toy base model");
    std::string tb_out = default_out_dir();
    uint64_t tb_seed = 1;
    int tb_max_epochs = 0;
    tb->add_option("--out", tb_out, "Output directory");
    tb->add_option("--seed", tb_seed, "Training seed");
    tb->add_option("--max-epochs", tb_max_epochs, "Cap on training epochs");

    // finetune
    auto* ft = app.add_subcommand("finetune", "Fine-tune a variant from a base checkpoint");
    std::string ft_base, ft_variant, ft_data = "safety", ft_out = default_out_dir();
    uint64_t ft_seed = 1;
    int ft_epochs = 0, ft_items = 0;
    double ft_lr = 0;
    ft->add_option("--base", ft_base, "Base checkpoint")->required();
    ft->add_option("--variant", ft_variant,
                   "llm-only | freeze-tower | freeze-projector | full-ft")
        ->required();
    ft->add_option("--data", ft_data, "safety | general");
    ft->add_option("--out", ft_out, "Output directory");
    ft->add_option("--seed", ft_seed, "Fine-tuning seed");
    ft->add_option("--epochs", ft_epochs, "Override fine-tune epochs");
    ft->add_option("--lr", ft_lr, "Override learning rate");
    ft->add_option("--items", ft_items, "Override dataset size");

    // attack
    auto* at = app.add_subcommand("attack", "Craft an adversarial image against a checkpoint");
    std::string at_model, at_harmful, at_pairs, at_out = default_out_dir();
    std::string at_alpha = "1/255", at_mode = "unconstrained", at_clean;
    attack::AttackConfig at_cfg;
    bool at_no_fts = false, at_no_tpg = false, at_from_clean = false;
    at->add_option("--model", at_model, "Model checkpoint")->required();
    at->add_option("--harmful", at_harmful, "Harmful strings file (one per line)")->required();
    at->add_option("--pairs", at_pairs, "Goal-target pairs JSONL")->required();
    at->add_option("--out", at_out, "Output directory");
    at->add_option("--sigma", at_cfg.sigma, "Encoder perturbation scale")
        ->capture_default_str();
    at->add_option("--alpha", at_alpha, "Step size, decimal or fraction")
        ->capture_default_str();
    at->add_option("--b", at_cfg.batch_size, "Batch size")->capture_default_str();
    at->add_option("--t1", at_cfg.t1_steps, "Stage-1 steps")->capture_default_str();
    at->add_option("--t2", at_cfg.t2_steps, "Stage-2 steps")->capture_default_str();
    at->add_option("--mode", at_mode, "unconstrained | eps:<value>")->capture_default_str();
    at->add_option("--seed", at_cfg.seed, "Attack seed")->capture_default_str();
    at->add_flag("--no-fts", at_no_fts, "Disable encoder perturbation");
    at->add_flag("--no-tpg", at_no_tpg, "Disable prompt guidance");
    at->add_option("--clean-image", at_clean, "Clean image tensor (eps-ball center)");
    at->add_flag("--start-from-clean", at_from_clean, "Start from the clean image");

    // transfer
    auto* tr = app.add_subcommand("transfer", "Evaluate one image across checkpoints");
    std::string tr_image, tr_goals, tr_out = default_out_dir(), tr_keywords;
    std::vector<std::string> tr_models;
    bool tr_tpg = false;
    int tr_max_tokens = 64;
    tr->add_option("--image", tr_image, "Adversarial image tensor (omit for no-attack row)");
    tr->add_option("--models", tr_models, "Model checkpoints")->required()->expected(-1);
    tr->add_option("--goals", tr_goals, "Goal-target pairs JSONL")->required();
    tr->add_flag("--tpg", tr_tpg, "Wrap goals in targeted prompt guidance");
    tr->add_option("--out", tr_out, "Output directory");
    tr->add_option("--max-tokens", tr_max_tokens, "Decode budget per goal");
    tr->add_option("--keywords", tr_keywords, "Refusal keyword file");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score toxicity of continuations");
    std::string ev_model, ev_prompts, ev_image, ev_lexicon, ev_out = default_out_dir();
    double ev_threshold = 0.5;
    int ev_max_tokens = 48;
    ev->add_option("--model", ev_model, "Model checkpoint")->required();
    ev->add_option("--continuations", ev_prompts, "Prompts file (one per line)")->required();
    ev->add_option("--image", ev_image, "Adversarial image tensor");
    ev->add_option("--lexicon", ev_lexicon, "Toxicity lexicon JSONL");
    ev->add_option("--threshold", ev_threshold, "Rate threshold")->capture_default_str();
    ev->add_option("--max-tokens", ev_max_tokens, "Decode budget")->capture_default_str();
    ev->add_option("--out", ev_out, "Output directory");

    // report
    auto* rp = app.add_subcommand("report", "Re-emit tables from stored verdicts, or verify a run");
    std::string rp_from, rp_out, rp_verify;
    rp->add_option("--from", rp_from, "Run directory with verdicts.json / records.json");
    rp->add_option("--out", rp_out, "Destination directory (defaults to --from)");
    rp->add_option("--verify", rp_verify, "Verify artifact digests of a run directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (tb->parsed()) return cmd_train_base(tb_out, tb_seed, tb_max_epochs);
        if (ft->parsed()) {
            return cmd_finetune(ft_base, ft_variant, ft_data, ft_out, ft_seed, ft_epochs, ft_lr,
                                ft_items);
        }
        if (at->parsed()) {
            at_cfg.alpha = parse_alpha(at_alpha);
            at_cfg.mode = parse_mode(at_mode, at_cfg.eps);
            at_cfg.fts_enabled = !at_no_fts;
            at_cfg.tpg_enabled = !at_no_tpg;
            at_cfg.start_from_clean = at_from_clean;
            return cmd_attack(at_model, at_harmful, at_pairs, at_out, at_cfg, at_clean);
        }
        if (tr->parsed()) {
            return cmd_transfer(tr_image, tr_models, tr_goals, tr_tpg, tr_out, tr_max_tokens,
                                tr_keywords);
        }
        if (ev->parsed()) {
            return cmd_evaluate(ev_model, ev_prompts, ev_image, ev_lexicon, ev_threshold,
                                ev_max_tokens, ev_out);
        }
        if (rp->parsed()) {
            if (rp_from.empty() && rp_verify.empty()) {
                std::cerr << "report: pass --from or --verify\n";
                return kExitUsage;
            }
            return cmd_report(rp_from, rp_out, rp_verify);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
