// Ranks normalization methods by their scores across datasets.
// Usage: rank_methods SCORES.csv

#include <cstdio>

#include <stainkit/analysis.hpp>
#include <stainkit/io/csv.hpp>

namespace sk = stainkit;
namespace io = stainkit::io;

int main(int argc, char** argv) {
    const std::string text = argc > 1 ? io::read_text(argv[1])
                                      : "repetition,method,dataset,score\n"
                                        "0,identity,center_a,0.81\n0,identity,center_b,0.56\n"
                                        "0,macenko,center_a,0.83\n0,macenko,center_b,0.70\n"
                                        "0,network,center_a,0.85\n0,network,center_b,0.70\n"
                                        "1,identity,center_a,0.79\n1,identity,center_b,0.60\n"
                                        "1,macenko,center_a,0.84\n1,macenko,center_b,0.66\n"
                                        "1,network,center_a,0.82\n1,network,center_b,0.72\n";
    const auto ranks = sk::aggregate_ranking(io::parse_scores_csv(text));
    for (const auto& r : ranks) {
        std::printf("%-10s %.3f +- %.3f\n", r.method.c_str(), r.mean_rank, r.std_rank);
    }
}
