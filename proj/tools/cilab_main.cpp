#include "cilab/cli.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Convex-integration lab for 2-D compressible Euler with a source term"};
    std::string config, out = "run";
    std::optional<std::uint64_t> seed;
    std::optional<int> threads, stages;
    app.add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out, "Output directory")->capture_default_str();
    app.add_option("--seed", seed, "Seed override");
    app.add_option("--threads", threads, "Worker threads");
    app.add_option("--stages", stages, "Stage count override");
    CLI11_PARSE(app, argc, argv);

    try {
        cilab::RunConfig cfg = cilab::load_config(config);
        cilab::RunOverrides o;
        o.seed = seed;
        o.threads = threads;
        o.stages = stages;
        if (const char* q = std::getenv("WILDFLOW_QUAD_REFINE")) {
            char* end = nullptr;
            const long v = std::strtol(q, &end, 10);
            if (end == q || *end != '\0') throw cilab::ConfigError("WILDFLOW_QUAD_REFINE: expected an integer");
            o.quad_refine = static_cast<int>(v);
        }
        cilab::apply_overrides(cfg, o);
        return cilab::run(cfg, out, std::cout);
    } catch (const cilab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
