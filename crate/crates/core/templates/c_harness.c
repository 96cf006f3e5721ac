
/* ---- harness ---- */
#include <time.h>

int main(int argc, char **argv) {
    const char *prof = getenv("KAGENT_PROFILE");
    if (!prof) {
        return kernel_main(argc, argv);
    }
    int warmup = 0, reps = 0;
    if (sscanf(prof, "%d,%d", &warmup, &reps) != 2) {
        fprintf(stderr, "bad KAGENT_PROFILE\n");
        return 2;
    }
    for (int i = 0; i < warmup; i++) {
        int rc = kernel_main(argc, argv);
        if (rc) return rc;
    }
    for (int i = 0; i < reps; i++) {
        struct timespec a, b;
        clock_gettime(CLOCK_MONOTONIC, &a);
        int rc = kernel_main(argc, argv);
        clock_gettime(CLOCK_MONOTONIC, &b);
        if (rc) return rc;
        double us = (double)(b.tv_sec - a.tv_sec) * 1e6 + (double)(b.tv_nsec - a.tv_nsec) / 1e3;
        printf("latency_us %.3f\n", us);
    }
    return 0;
}
