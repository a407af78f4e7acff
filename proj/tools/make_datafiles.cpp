// Regenerates the committed data/ files from the library generators.
// Run from the repository root after changing the synthetic vocabulary.

#include <cstdio>
#include <string>

#include "sea/artifact_io.hpp"
#include "sea/evalkit.hpp"
#include "sea/synth.hpp"

using namespace sea;

int main(int argc, char** argv) {
    std::string dir = argc > 1 ? argv[1] : "data";

    attack::Corpora corpora = synth::attack_corpora();
    io::save_corpora(dir + "/harmful_strings.txt", dir + "/goal_targets.jsonl", corpora);

    attack::Corpora eval_pairs;
    eval_pairs.harmful_strings = {"unused"};
    eval_pairs.goal_targets = synth::eval_goals(20);
    io::save_corpora(dir + "/.tmp_unused.txt", dir + "/eval_goals.jsonl", eval_pairs);
    std::remove((dir + "/.tmp_unused.txt").c_str());

    std::string prompts;
    for (const auto& p : synth::continuation_prompts()) {
        prompts += p;
        prompts += '\n';
    }
    io::atomic_write(dir + "/continuation_prompts.txt", prompts);

    std::string keywords;
    for (const auto& k : evalkit::default_refusal_keywords()) {
        keywords += k;
        keywords += '\n';
    }
    io::atomic_write(dir + "/refusal_keywords.txt", keywords);

    evalkit::save_lexicon(dir + "/toxicity_lexicon.jsonl", evalkit::default_lexicon());

    std::printf("wrote data files under %s\n", dir.c_str());
    return 0;
}
