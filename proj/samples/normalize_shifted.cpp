// Fits a template on one synthetic set, shifts the hue of copies of a
// second set and shows how Macenko and LUT normalization pull them back.

#include <cstdio>
#include <vector>

#include <stainkit/analysis.hpp>
#include <stainkit/augment.hpp>
#include <stainkit/normalize.hpp>
#include <stainkit/synthetic.hpp>

namespace sk = stainkit;

int main() {
    sk::SyntheticSpec spec;
    spec.count = 32;
    spec.seed = 1;
    const auto templ_set = sk::synthesize_set(spec);
    spec.seed = 2;
    const auto slide = sk::synthesize_set(spec);

    const sk::NormProfile templ = sk::fit_macenko(templ_set);
    std::vector<sk::HsvStats> raw, macenko, lut;
    for (double shift : {-0.04, 0.0, 0.04}) {
        std::vector<sk::Patch> shifted;
        for (const auto& p : slide) shifted.push_back(sk::hsv_shift(p, shift, 0.0, 0.0));

        const sk::MacenkoNormalizer deconv(templ, sk::fit_macenko(shifted));
        const sk::LutNormalizer table(sk::fit_lut(shifted, templ_set));
        std::vector<sk::Patch> a, b;
        for (const auto& p : shifted) {
            a.push_back(deconv(p));
            b.push_back(table(p));
        }
        raw.push_back(sk::hsv_stats(shifted, "raw"));
        macenko.push_back(sk::hsv_stats(a, "macenko"));
        lut.push_back(sk::hsv_stats(b, "lut"));
        std::printf("shift %+.2f  hue raw %.3f  macenko %.3f  lut %.3f\n", shift, raw.back().mean_hue,
                    macenko.back().mean_hue, lut.back().mean_hue);
    }
    std::printf("spread raw %.4f  macenko %.4f  lut %.4f\n", sk::spread(raw), sk::spread(macenko), sk::spread(lut));
}
