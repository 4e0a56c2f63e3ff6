/* Small test kernel: dense matrix multiply with a few control switches.
 *
 *   kernel [N]            multiply two N x N matrices (default 64), print a checksum
 *   kernel --sleep S      sleep S seconds, then exit
 *   kernel --exit K       exit with status K
 */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <time.h>

static void pause_for(double seconds) {
    struct timespec ts;
    ts.tv_sec = (time_t)seconds;
    ts.tv_nsec = (long)((seconds - (double)ts.tv_sec) * 1e9);
    nanosleep(&ts, NULL);
}

int main(int argc, char **argv) {
    int n = 64;
    for (int i = 1; i < argc; i++) {
        if (strcmp(argv[i], "--sleep") == 0 && i + 1 < argc) {
            pause_for(atof(argv[++i]));
            return 0;
        }
        if (strcmp(argv[i], "--exit") == 0 && i + 1 < argc)
            return atoi(argv[++i]);
        n = atoi(argv[i]);
    }
    if (n < 1)
        n = 1;
    double *a = malloc(sizeof(double) * n * n);
    double *b = malloc(sizeof(double) * n * n);
    double *c = calloc((size_t)n * n, sizeof(double));
    if (!a || !b || !c)
        return 3;
    for (int i = 0; i < n * n; i++) {
        a[i] = (double)(i % 7) * 0.5;
        b[i] = (double)(i % 5) * 0.25;
    }
    for (int i = 0; i < n; i++)
        for (int k = 0; k < n; k++)
            for (int j = 0; j < n; j++)
                c[i * n + j] += a[i * n + k] * b[k * n + j];
    double sum = 0.0;
    for (int i = 0; i < n * n; i++)
        sum += c[i];
    printf("%.6f\n", sum);
    free(a);
    free(b);
    free(c);
    return 0;
}
