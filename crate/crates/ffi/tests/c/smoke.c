#include <math.h>
#include <stdio.h>
#include "growfrag.h"

#define CHECK(cond, msg)                      \
    do {                                      \
        if (!(cond)) {                        \
            fprintf(stderr, "FAIL: %s\n", msg); \
            return 1;                         \
        }                                     \
    } while (0)

int main(void) {
    GfModel *model = NULL;
    CHECK(gf_model_from_toml("family = \"linear\"\na = 0.7\n", &model) == GF_STATUS_OK, "model");
    double c = 0.0;
    CHECK(gf_model_growth(model, 2.0, &c) == GF_STATUS_OK, "growth");
    CHECK(fabs(c - 1.4) < 1e-12, "growth value");

    double times[2] = {0.0, 1.0};
    double counts[2], masses[2];
    CHECK(gf_simulate_population(model, 1.0, 1.0, 100000, 7, 0, times, 2, counts, masses) == GF_STATUS_OK,
          "simulate");
    CHECK(fabs(masses[1] - exp(0.7)) < 1e-6 * exp(0.7), "mass law");

    GfMalthusResult res;
    CHECK(gf_malthus_exponent(model, 1.0, 1, 0.0, 0, &res) == GF_STATUS_OK, "malthus");
    CHECK(fabs(res.lambda - 0.7) < 1e-3, "lambda");

    CHECK(gf_model_growth(NULL, 1.0, &c) == GF_STATUS_NULL_POINTER, "null model");
    CHECK(gf_last_error_message() != NULL, "error message");

    GfModel *bad = NULL;
    CHECK(gf_model_family("nope", &bad) == GF_STATUS_CONFIG, "bad family");
    CHECK(bad == NULL, "no handle on failure");

    gf_model_free(model);
    printf("ok %s\n", gf_version());
    return 0;
}
