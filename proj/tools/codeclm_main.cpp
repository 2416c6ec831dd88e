// codeclm: canonical-codec language modeling pipeline in one executable.
// Subcommands cover the full path images -> canonical JPEG streams -> BPE
// tokens -> trained transformer -> sampled, restored JPEG files.

#include <Eigen/Core>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "codeclm/bbpe.hpp"
#include "codeclm/corpus.hpp"
#include "codeclm/evalx.hpp"
#include "codeclm/image.hpp"
#include "codeclm/jpeg_stream.hpp"
#include "codeclm/lm_core.hpp"
#include "codeclm/sample.hpp"
#include "codeclm/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace codeclm;

namespace {

int log_level() {  // 0 quiet, 1 info, 2 debug
  const char* env = std::getenv("CODECLM_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "quiet" || v == "0") return 0;
  if (v == "debug" || v == "2") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "[codeclm] " << msg << "\n";
}

struct RunConfig {
  CodecProfile profile;
  ModelConfig model;
  TrainConfig train;
  SampleConfig sample;
  std::uint32_t context_len = 1024;
  int vocab_target = 322;
  int threads = 1;
  std::uint64_t seed = 0;

  json to_json() const {
    json j;
    j["profile"] = {{"quality", profile.quality},
                    {"restart_interval_mcus", profile.restart_interval_mcus},
                    {"pad_to_mcu", profile.pad_to_mcu}};
    j["model"] = {{"vocab_size", model.vocab_size},
                  {"dim", model.dim},
                  {"n_layers", model.n_layers},
                  {"n_heads", model.n_heads},
                  {"ffn_multiplier", model.ffn_multiplier},
                  {"max_context", model.max_context},
                  {"rope_base", model.rope_base},
                  {"norm_eps", model.norm_eps},
                  {"seed", model.seed}};
    j["train"] = {{"peak_lr", train.peak_lr},
                  {"warmup_steps", train.warmup_steps},
                  {"total_steps", train.total_steps},
                  {"weight_decay", train.weight_decay},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"grad_clip_norm", train.grad_clip_norm},
                  {"adam_eps", train.adam_eps},
                  {"lr_floor", train.lr_floor},
                  {"batch_size", train.batch_size},
                  {"checkpoint_every", train.checkpoint_every},
                  {"seed", train.seed}};
    j["sample"] = {{"temperature", sample.temperature},
                   {"top_k", sample.top_k},
                   {"top_p", sample.top_p},
                   {"max_new_tokens", sample.max_new_tokens},
                   {"seed", sample.seed}};
    j["context_len"] = context_len;
    j["vocab_target"] = vocab_target;
    j["threads"] = threads;
    j["seed"] = seed;
    return j;
  }

  static RunConfig from_json(const json& j) {
    RunConfig c;
    if (j.contains("profile")) {
      const auto& p = j["profile"];
      c.profile.quality = p.value("quality", c.profile.quality);
      c.profile.restart_interval_mcus =
          p.value("restart_interval_mcus", c.profile.restart_interval_mcus);
      c.profile.pad_to_mcu = p.value("pad_to_mcu", c.profile.pad_to_mcu);
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.vocab_size = m.value("vocab_size", c.model.vocab_size);
      c.model.dim = m.value("dim", c.model.dim);
      c.model.n_layers = m.value("n_layers", c.model.n_layers);
      c.model.n_heads = m.value("n_heads", c.model.n_heads);
      c.model.ffn_multiplier = m.value("ffn_multiplier", c.model.ffn_multiplier);
      c.model.max_context = m.value("max_context", c.model.max_context);
      c.model.rope_base = m.value("rope_base", c.model.rope_base);
      c.model.norm_eps = m.value("norm_eps", c.model.norm_eps);
      c.model.seed = m.value("seed", c.model.seed);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.train.peak_lr = t.value("peak_lr", c.train.peak_lr);
      c.train.warmup_steps = t.value("warmup_steps", c.train.warmup_steps);
      c.train.total_steps = t.value("total_steps", c.train.total_steps);
      c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
      c.train.beta1 = t.value("beta1", c.train.beta1);
      c.train.beta2 = t.value("beta2", c.train.beta2);
      c.train.grad_clip_norm = t.value("grad_clip_norm", c.train.grad_clip_norm);
      c.train.adam_eps = t.value("adam_eps", c.train.adam_eps);
      c.train.lr_floor = t.value("lr_floor", c.train.lr_floor);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.checkpoint_every = t.value("checkpoint_every", c.train.checkpoint_every);
      c.train.seed = t.value("seed", c.train.seed);
    }
    if (j.contains("sample")) {
      const auto& s = j["sample"];
      c.sample.temperature = s.value("temperature", c.sample.temperature);
      c.sample.top_k = s.value("top_k", c.sample.top_k);
      c.sample.top_p = s.value("top_p", c.sample.top_p);
      c.sample.max_new_tokens = s.value("max_new_tokens", c.sample.max_new_tokens);
      c.sample.seed = s.value("seed", c.sample.seed);
    }
    c.context_len = j.value("context_len", c.context_len);
    c.vocab_target = j.value("vocab_target", c.vocab_target);
    c.threads = j.value("threads", c.threads);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/resolved_config.json", cfg.to_json().dump(2) + "\n");
}

std::vector<Bytes> load_canonical_dir(const std::string& dir) {
  const auto files = list_corpus_files(dir, {".jcs"});
  if (files.empty()) throw EmptyCorpus("no .jcs canonical streams in " + dir);
  std::vector<Bytes> docs;
  docs.reserve(files.size());
  for (const auto& f : files) docs.push_back(read_file(f));
  return docs;
}

std::vector<Image> load_image_set(const std::string& path) {
  std::vector<Image> images;
  for (const auto& f : list_corpus_files(path, {".png", ".PNG", ".rgb"}))
    images.push_back(load_image(f));
  for (const auto& f : list_corpus_files(path, {".jpg", ".jpeg"}))
    images.push_back(decode_jpeg(read_file(f)));
  if (images.empty()) throw EmptyCorpus("no images found in " + path);
  return images;
}

FeatureStats stats_for_path(const std::string& path) {
  if (fs::is_directory(path)) return stats_from_images(load_image_set(path));
  std::string extractor;
  const Eigen::MatrixXd rows = load_embeddings(path, &extractor);
  return feature_stats(rows, extractor);
}

Params<float> load_model(const std::string& checkpoint) {
  return load_checkpoint(checkpoint).params;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"canonical-codec language modeling pipeline"};
  app.set_help_all_flag("--help-all", "print help for every subcommand");
  app.require_subcommand(1);

  std::string config_path, out_dir, images_dir, corpus_dir, vocab_path, store_path;
  std::string checkpoint_path, tables_path, image_path, resume_path, set_a, set_b;
  std::string inspect_path;
  double ratio = 0.5;
  int n_samples = 16;
  int cols = 4;
  bool seed_set = false, threads_set = false;
  std::uint64_t seed = 0;
  int threads = 1;
  double top_p = -1, temperature = -1;
  int top_k = -1;

  app.add_option("--config", config_path, "run config JSON (defaults apply when absent)");
  app.add_option("--seed", seed, "override every seed in the run config")
      ->each([&seed_set](const std::string&) { seed_set = true; });
  app.add_option("--threads", threads, "worker/BLAS thread count")
      ->each([&threads_set](const std::string&) { threads_set = true; });

  auto* enc = app.add_subcommand("encode-corpus",
                                 "encode images to canonical streams + table sidecar");
  enc->add_option("--images", images_dir, "input image directory")->required();
  enc->add_option("--out", out_dir, "output directory")->required();

  auto* tbpe = app.add_subcommand("train-bpe", "learn BPE merges over canonical streams");
  tbpe->add_option("--corpus", corpus_dir, "directory of .jcs streams")->required();
  tbpe->add_option("--out", vocab_path, "vocabulary file to write")->required();
  int vocab_target_flag = -1;
  tbpe->add_option("--vocab-size", vocab_target_flag, "total vocabulary size (default 322)");

  auto* bstore = app.add_subcommand("build-store", "tokenize and chunk the corpus");
  bstore->add_option("--corpus", corpus_dir, "directory of .jcs streams")->required();
  bstore->add_option("--vocab", vocab_path, "vocabulary file")->required();
  bstore->add_option("--out", store_path, "token store file to write")->required();
  int context_len_flag = -1;
  bstore->add_option("--context-len", context_len_flag, "chunk length (default 1024)");

  auto* tr = app.add_subcommand("train", "run the optimization loop");
  tr->add_option("--store", store_path, "training token store")->required();
  tr->add_option("--out", out_dir, "checkpoint/metrics directory")->required();
  tr->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* smp = app.add_subcommand("sample", "unconditional generation to JPEG files");
  smp->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  smp->add_option("--vocab", vocab_path, "vocabulary file")->required();
  smp->add_option("--tables", tables_path, "table sidecar file")->required();
  smp->add_option("--out", out_dir, "output directory")->required();
  smp->add_option("--n-samples", n_samples, "number of samples");
  smp->add_option("--top-k", top_k, "top-k truncation");
  smp->add_option("--top-p", top_p, "nucleus truncation");
  smp->add_option("--temperature", temperature, "softmax temperature");

  auto* cmp = app.add_subcommand("complete", "complete a partial image");
  cmp->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  cmp->add_option("--vocab", vocab_path, "vocabulary file")->required();
  cmp->add_option("--tables", tables_path, "table sidecar file")->required();
  cmp->add_option("--image", image_path, "source image (PNG or raw RGB)")->required();
  cmp->add_option("--ratio", ratio, "prompt ratio in [0,1]");
  cmp->add_option("--out", out_dir, "output directory")->required();
  cmp->add_option("--top-k", top_k, "top-k truncation");
  cmp->add_option("--top-p", top_p, "nucleus truncation");
  cmp->add_option("--temperature", temperature, "softmax temperature");

  auto* ebpb = app.add_subcommand("eval-bpb", "bits per canonical byte on a held-out store");
  ebpb->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  ebpb->add_option("--store", store_path, "held-out token store")->required();
  ebpb->add_option("--vocab", vocab_path, "vocabulary file")->required();

  auto* edr = app.add_subcommand("eval-decode-rate", "decode health of unconditional samples");
  edr->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  edr->add_option("--vocab", vocab_path, "vocabulary file")->required();
  edr->add_option("--tables", tables_path, "table sidecar file")->required();
  edr->add_option("--n-samples", n_samples, "number of samples");

  auto* efr = app.add_subcommand("eval-frechet", "Frechet distance between two image sets");
  efr->add_option("--set-a", set_a, "image directory or embeddings file")->required();
  efr->add_option("--set-b", set_b, "image directory or embeddings file")->required();

  auto* ins = app.add_subcommand("inspect", "dump the segment table and MCU map of a file");
  ins->add_option("file", inspect_path, "JPEG or canonical stream file")->required();

  auto* gal = app.add_subcommand("gallery", "tile images into one PNG sheet");
  gal->add_option("--images", images_dir, "directory of images (JPEG or PNG)")->required();
  gal->add_option("--cols", cols, "tiles per row");
  gal->add_option("--out", out_dir, "output PNG path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::from_json(json::parse(read_text_file(config_path)));
    if (seed_set) {
      cfg.seed = seed;
      cfg.model.seed = seed;
      cfg.train.seed = seed;
      cfg.sample.seed = seed;
    }
    if (threads_set) cfg.threads = threads;
    if (top_k >= 0) cfg.sample.top_k = top_k;
    if (top_p >= 0) cfg.sample.top_p = top_p;
    if (temperature >= 0) cfg.sample.temperature = temperature;
    if (vocab_target_flag > 0) cfg.vocab_target = vocab_target_flag;
    if (context_len_flag > 0) cfg.context_len = static_cast<std::uint32_t>(context_len_flag);
    Eigen::setNbThreads(cfg.threads);

    if (*enc) {
      write_resolved_config(cfg, out_dir);
      auto [docs, tables] = encode_image_dir(images_dir, cfg.profile, cfg.threads);
      tables.profile_hash = cfg.profile.hash();
      save_tables(out_dir + "/tables.bin", tables);
      std::size_t total = 0;
      for (std::size_t i = 0; i < docs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "/%06zu.jcs", i);
        write_file(out_dir + name, docs[i]);
        total += docs[i].size();
      }
      json j;
      j["images"] = docs.size();
      j["profile"] = cfg.profile.describe();
      j["profile_hash"] = hex_u64(cfg.profile.hash());
      j["mean_stream_bytes"] = static_cast<double>(total) / static_cast<double>(docs.size());
      write_text_file(out_dir + "/corpus_manifest.json", j.dump(2) + "\n");
      info("encoded " + std::to_string(docs.size()) + " images -> " + out_dir);
      std::cout << j.dump(2) << "\n";
    } else if (*tbpe) {
      const auto docs = load_canonical_dir(corpus_dir);
      BpeVocab vocab = train_bpe(docs, cfg.vocab_target);
      vocab.profile_hash = cfg.profile.hash();
      save_vocab(vocab_path, vocab);
      info("trained " + std::to_string(vocab.merges.size()) + " merges -> " + vocab_path);
      std::cout << "vocab_size " << vocab.size() << "\nmerges " << vocab.merges.size()
                << "\nhash " << hex_u64(vocab.hash()) << "\n";
    } else if (*bstore) {
      const auto docs = load_canonical_dir(corpus_dir);
      const BpeVocab vocab = load_vocab(vocab_path);
      const TokenStore store =
          build_corpus_from_streams(docs, vocab, cfg.context_len, cfg.profile.hash());
      save_store(store_path, store);
      info("wrote store with " + std::to_string(store.tokens.size()) + " tokens");
      std::cout << store_manifest_json(store);
    } else if (*tr) {
      write_resolved_config(cfg, out_dir);
      const TokenStore store = load_store(store_path);
      if (cfg.model.vocab_size == 0)
        cfg.model.vocab_size = static_cast<int>(store.vocab_size);
      const FitResult result = fit(cfg.train, cfg.model, store, out_dir, resume_path);
      info("final checkpoint: " + result.final_checkpoint);
      if (!result.metrics.empty())
        std::cout << "final_loss " << result.metrics.back().loss << "\n";
      std::cout << "checkpoint " << result.final_checkpoint << "\n";
    } else if (*smp) {
      write_resolved_config(cfg, out_dir);
      const Params<float> params = load_model(checkpoint_path);
      const BpeVocab vocab = load_vocab(vocab_path);
      const TableSet tables = load_tables(tables_path);
      TokenSequence bos;
      bos.ids.push_back(BpeVocab::bos_id);
      json statuses = json::array();
      for (int i = 0; i < n_samples; ++i) {
        SampleConfig sc = cfg.sample;
        sc.seed = splitmix64(cfg.sample.seed + static_cast<std::uint64_t>(i));
        char name[32];
        std::snprintf(name, sizeof(name), "/sample_%03d.jpg", i);
        try {
          const TokenSequence gen = generate(params, bos, sc);
          const RestoreResult restored = restore(ByteSpan(bpe_decode(gen, vocab)), tables);
          write_file(out_dir + name, restored.file);
          statuses.push_back(
              {{"file", out_dir + name},
               {"status", restored.status == RestoreStatus::clean ? "clean" : "salvaged"},
               {"tokens", gen.size()}});
        } catch (const UnrecoverableStream& e) {
          statuses.push_back({{"file", nullptr}, {"status", "unrecoverable"}, {"error", e.what()}});
        }
      }
      write_text_file(out_dir + "/samples.json", statuses.dump(2) + "\n");
      std::cout << statuses.dump(2) << "\n";
    } else if (*cmp) {
      write_resolved_config(cfg, out_dir);
      const Params<float> params = load_model(checkpoint_path);
      const BpeVocab vocab = load_vocab(vocab_path);
      const TableSet tables = load_tables(tables_path);
      const Image image = load_image(image_path);
      const CompletionResult result =
          complete_image(params, image, ratio, cfg.sample, vocab, tables, cfg.profile);
      const std::string out_file = out_dir + "/completed.jpg";
      write_file(out_file, result.jpeg);
      json j;
      j["file"] = out_file;
      j["status"] = result.status == RestoreStatus::clean ? "clean" : "salvaged";
      j["ratio"] = ratio;
      j["mcus_kept"] = result.mcus_kept;
      j["mcus_filled"] = result.mcus_filled;
      j["tokens"] = result.tokens.size();
      write_text_file(out_dir + "/completion.json", j.dump(2) + "\n");
      std::cout << j.dump(2) << "\n";
    } else if (*ebpb) {
      const Params<float> params = load_model(checkpoint_path);
      const TokenStore store = load_store(store_path);
      const BpeVocab vocab = load_vocab(vocab_path);
      std::cout << "bits_per_byte " << bits_per_byte(params, store, vocab) << "\n";
    } else if (*edr) {
      const Params<float> params = load_model(checkpoint_path);
      const BpeVocab vocab = load_vocab(vocab_path);
      const TableSet tables = load_tables(tables_path);
      const DecodeRateReport report =
          decode_success_rate(params, cfg.sample, n_samples, vocab, tables);
      json j;
      j["clean"] = report.clean;
      j["salvaged"] = report.salvaged;
      j["unrecoverable"] = report.unrecoverable;
      j["clean_rate"] = report.clean_rate();
      std::cout << j.dump(2) << "\n";
    } else if (*efr) {
      const double d = frechet_distance(stats_for_path(set_a), stats_for_path(set_b));
      std::cout << "frechet_distance " << d << "\n";
    } else if (*ins) {
      std::cout << describe_stream(read_file(inspect_path));
    } else if (*gal) {
      const std::vector<Image> images = load_image_set(images_dir);
      save_png(out_dir, tile_images(images, cols));
      info("wrote " + out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
