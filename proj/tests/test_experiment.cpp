#include <doctest.h>

#include <filesystem>

#include "hspi/experiment.hpp"

using namespace hspi;

namespace {

std::string tmp_out(const char* leaf) {
    std::filesystem::path p = std::filesystem::temp_directory_path() / "hspi_exp_tests" / leaf;
    std::filesystem::remove_all(p);
    return p.string();
}

// Small, fast logit-distribution study over an untrained CNN.
std::string small_ld_spec(const std::string& out) {
    return "name small-ld\n"
           "attack ld\n"
           "model cnn classes=10 seed=711\n"
           "registry default\n"
           "profiles fp32 fp8-e4\n"
           "probes seed=7 count=20\n"
           "set-size 10\n"
           "svm features=raw\n"
           "out " + out + "\n";
}

}  // namespace

TEST_CASE("experiment specs parse into full descriptions") {
    ExperimentSpec spec = experiment_parse(
        "# comment\n"
        "name demo\n"
        "attack bi\n"
        "study batch-group\n"
        "model mlp in=48 hidden=16,8 classes=4 seed=3\n"
        "train-on textures per-class=5 seed=4 epochs=2 lr=0.5 train-seed=5\n"
        "registry default\n"
        "profiles fp8-e4 fp16\n"
        "pgd loss=1vr target=2 iters=50 starts=3 seed=6\n"
        "oracle-batch-group 4\n"
        "out /tmp/demo\n");
    CHECK(spec.name == "demo");
    CHECK(spec.attack == "bi");
    CHECK(spec.study == "batch-group");
    CHECK(spec.model.arch == "mlp");
    CHECK(spec.model.in_dim == 48);
    CHECK(spec.model.hidden == std::vector<int64_t>{16, 8});
    CHECK(spec.model.classes == 4);
    CHECK(spec.model.seed == 3);
    CHECK(spec.model.trained);
    CHECK(spec.model.per_class == 5);
    CHECK(spec.model.lr == 0.5);
    CHECK(spec.model.train_seed == 5);
    CHECK(spec.registry_path.empty());
    CHECK(spec.profiles == std::vector<std::string>{"fp8-e4", "fp16"});
    CHECK(spec.pgd.loss == PgdConfig::Loss::OneVsRestTargeted);
    CHECK(spec.pgd.target_class == 2);
    CHECK(spec.pgd.max_iters == 50);
    CHECK(spec.pgd.batch_size == 3);
    CHECK(spec.pgd.seed == 6);
    CHECK(spec.oracle_batch_group == 4);
    CHECK(spec.out_dir == "/tmp/demo");
}

TEST_CASE("experiment parsing reports bad lines") {
    CHECK_THROWS_WITH_AS(experiment_parse("name a\nbogus-key 1\n"),
                         doctest::Contains("line 2"), Error);
    CHECK_THROWS_AS(experiment_parse("svm features=fancy\n"), Error);
    CHECK_THROWS_AS(experiment_parse("probes seed=xyz\n"), Error);
    CHECK_THROWS_AS(experiment_parse("model\n"), Error);
}

TEST_CASE("bundled study specs parse") {
    const char* names[] = {"quant7-whitebox-ld", "quant-pairs-whitebox-bi", "batch-group-study",
                           "bitflip-defense-study", "transfer-study"};
    for (const char* name : names) {
        ExperimentSpec spec =
            experiment_load(std::string(HSPI_SOURCE_DIR "/configs/") + name + ".spec");
        CHECK(spec.name == name);
        CHECK((spec.attack == "bi" || spec.attack == "ld"));
        CHECK_FALSE(spec.out_dir.empty());
        CHECK_FALSE(spec.profiles.empty());
    }
}

TEST_CASE("unknown profile ids fail before any computation") {
    ExperimentSpec spec = experiment_parse(small_ld_spec(tmp_out("unknown")));
    spec.profiles.push_back("fp64");
    CHECK_THROWS_WITH_AS(run_experiment(spec), doctest::Contains("stage validate"), Error);
    CHECK_THROWS_WITH_AS(run_experiment(spec), doctest::Contains("fp64"), Error);
}

TEST_CASE("validation rejects inconsistent studies") {
    ExperimentSpec spec = experiment_parse(small_ld_spec(tmp_out("bad")));
    SUBCASE("bad attack") {
        spec.attack = "sql-injection";
        CHECK_THROWS_WITH_AS(run_experiment(spec), doctest::Contains("attack"), Error);
    }
    SUBCASE("bad study combination") {
        spec.study = "batch-group";  // ld has no batch-group study
        CHECK_THROWS_AS(run_experiment(spec), Error);
    }
    SUBCASE("probe count below set size") {
        spec.probe_count = 5;
        CHECK_THROWS_WITH_AS(run_experiment(spec), doctest::Contains("stage validate"), Error);
    }
    SUBCASE("missing model file") {
        spec.model.path = "/tmp/does_not_exist_hspi.bin";
        CHECK_THROWS_WITH_AS(run_experiment(spec), doctest::Contains("stage validate"), Error);
    }
    SUBCASE("missing name") {
        spec.name.clear();
        CHECK_THROWS_AS(run_experiment(spec), Error);
    }
    SUBCASE("missing out dir") {
        spec.out_dir.clear();
        CHECK_THROWS_AS(run_experiment(spec), Error);
    }
}

TEST_CASE("experiment reruns write byte-identical results") {
    std::string out1 = tmp_out("rerun1");
    std::string out2 = tmp_out("rerun2");
    ExperimentResult r1 = run_experiment(experiment_parse(small_ld_spec(out1)));
    ExperimentResult r2 = run_experiment(experiment_parse(small_ld_spec(out2)));
    CHECK(r1.csv == r2.csv);
    CHECK(r1.summary == r2.summary);
    CHECK(read_file_text(r1.csv_path) == r1.csv);
    CHECK(read_file_text(r2.csv_path) == r2.csv);
    CHECK(read_file_text(r1.summary_path) == r1.summary);

    CHECK(r1.csv.find("# experiment,small-ld") != std::string::npos);
    CHECK(r1.csv.find("# registry-hash,") != std::string::npos);
    CHECK(r1.csv.find("# seeds,") != std::string::npos);
    CHECK(r1.csv.find("record,arm,label,support,accuracy,f1") != std::string::npos);
    CHECK(r1.csv.find("summary,whitebox,accuracy") != std::string::npos);
    CHECK(r1.summary.find("registry hash") != std::string::npos);
}

TEST_CASE("defense study reports both arms and the drop") {
    std::string out = tmp_out("defense");
    ExperimentSpec spec = experiment_parse(
        "name tiny-defense\n"
        "attack ld\n"
        "study defense\n"
        "model cnn classes=10 seed=711\n"
        "profiles fp32 fp16\n"
        "probes seed=7 count=20\n"
        "set-size 10\n"
        "svm features=raw\n"
        "defense logit-bitflip:p=0.05\n"
        "oracle-seed 40001\n"
        "out " + out + "\n");
    ExperimentResult r = run_experiment(spec);
    CHECK(r.csv.find("summary,none,accuracy") != std::string::npos);
    CHECK(r.csv.find("summary,defended,accuracy") != std::string::npos);
    CHECK(r.csv.find("summary,both,drop-points") != std::string::npos);
    CHECK(r.summary.find("accuracy drop") != std::string::npos);
}

TEST_CASE("transfer study scores classes against the random baseline") {
    std::string out = tmp_out("transfer");
    ExperimentSpec spec = experiment_parse(
        "name tiny-transfer\n"
        "attack ld\n"
        "study transfer\n"
        "model cnn classes=10 seed=711\n"
        "transfer-model cnn classes=10 seed=715\n"
        "profiles fp32 fp8-e4\n"
        "probes seed=7 count=30\n"
        "set-size 10\n"
        "svm features=raw\n"
        "out " + out + "\n");
    ExperimentResult r = run_experiment(spec);
    CHECK(r.csv.find("record,label,support,f1,random-f1,above") != std::string::npos);
    CHECK(r.csv.find("summary,train-accuracy") != std::string::npos);
    CHECK(r.csv.find("summary,classes-above-baseline") != std::string::npos);
    CHECK(r.summary.find("classes above their random-guess F1") != std::string::npos);
}

TEST_CASE("pair study succeeds on a coarse quantization pair") {
    std::string out = tmp_out("pairs");
    ExperimentSpec spec = experiment_parse(
        "name tiny-pairs\n"
        "attack bi\n"
        "study whitebox\n"
        "model mlp in=48 hidden=16 classes=4 seed=721\n"
        "profiles fp8-e4\n"
        "reference fp32\n"
        "pgd loss=pair iters=200 starts=1 seed=7100\n"
        "trials 3\n"
        "out " + out + "\n");
    ExperimentResult r = run_experiment(spec);
    CHECK(r.csv.find("record,reference,target,trials,successes,rate,median-iterations") !=
          std::string::npos);
    CHECK(r.csv.find("pair,fp32,fp8-e4,3,3,1,") != std::string::npos);
}

TEST_CASE("batch-group study runs both arms") {
    std::string out = tmp_out("batchgroup");
    ExperimentSpec spec = experiment_parse(
        "name tiny-batch-group\n"
        "attack bi\n"
        "study batch-group\n"
        "model mlp in=48 hidden=16 classes=4 seed=721\n"
        "profiles fp8-e4 fp16\n"
        "pgd loss=1vr target=1 iters=400 starts=4 seed=903\n"
        "oracle-batch-group 8\n"
        "out " + out + "\n");
    ExperimentResult r = run_experiment(spec);
    CHECK(r.csv.find("summary,mismatched,top-score,") != std::string::npos);
    // The matched arm serves the campaign's own batch group, so the singled
    // profile must score a perfect match and the flag must read matched.
    CHECK(r.csv.find("summary,matched,top-score,1,1") != std::string::npos);
    CHECK(r.csv.find("identify,matched,fp8-e4,1,1") != std::string::npos);
}

TEST_CASE("stage tags wrap downstream failures") {
    std::string out = tmp_out("stagetag");
    ExperimentSpec spec = experiment_parse(
        "name broken\n"
        "attack bi\n"
        "model mlp in=48 hidden=16 classes=4 seed=721\n"
        "profiles fp16\n"
        "reference fp32\n"
        "pgd loss=1v1 iters=10 starts=1 seed=1\n"  // targeted loss without a target
        "trials 1\n"
        "out " + out + "\n");
    CHECK_THROWS_WITH_AS(run_experiment(spec), doctest::Contains("stage campaign"), Error);
}
