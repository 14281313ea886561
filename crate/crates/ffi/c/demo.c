/* Build: cargo build -p cpnr-ffi && cc -Iinclude c/demo.c ../../target/debug/libcpnr_ffi.a -lpthread -ldl -lm -o demo */
#include <stdio.h>
#include "cpnr.h"

int main(void) {
    double reps[3] = {6.0, 8.0, 10.0};
    double rows[9] = {0.5, 0.4, 0.1, 0.3, 0.4, 0.3, 0.2, 0.3, 0.5};
    CpnrModel *model = NULL;
    if (cpnr_model_from_matrix(reps, 3, rows, &model) != CPNR_STATUS_OK) {
        fprintf(stderr, "model: %s\n", cpnr_last_error_message());
        return 1;
    }
    CpnrParams p = {2, 10.0, 3.0, 0.1, 1.2, 0.0, 5};
    CpnrOutput out;
    double per_day[5];
    if (cpnr_compute(model, &p, &out, per_day, NULL, 5) != CPNR_STATUS_OK) {
        fprintf(stderr, "cpnr: %s\n", cpnr_last_error_message());
        cpnr_model_free(model);
        return 1;
    }
    printf("prob_C=%.6f prob_NC=%.6f cpnr=%.6f\n", out.prob_c, out.prob_nc, out.cpnr);

    CpnrGrid grid;
    CpnrSelection sel;
    cpnr_grid_default(&grid);
    grid.alpha = 0.2;
    if (cpnr_optimize(model, 2, 10.0, 0.0, 5, &grid, &sel) == CPNR_STATUS_OK && sel.found)
        printf("m=%.2f delta=%.2f w=%.2f cpnr=%.6f set=%zu\n", sel.m, sel.delta, sel.w, sel.cpnr, sel.set_size);
    cpnr_model_free(model);
    return 0;
}
