/* Runtime prepended to every generated C kernel.
 *
 * Kernels define `int kernel_main(int argc, char **argv)`. argv[1..] hold one
 * .ten path per declared tensor in declaration order, followed by NAME=VALUE
 * pairs for every symbol and constexpr. Inputs are populated; outputs exist
 * zero-filled at their final shape and must be rewritten with ten_save.
 */
#include <stdint.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <math.h>

typedef struct {
    int dtype; /* 0 = f16, 1 = f32, 2 = i32 */
    int rank;
    long dims[8];
    long n;
    float *data;
} ten_t;

static float kagent_half_to_float(uint16_t h) {
    uint32_t sign = (uint32_t)(h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t man = h & 0x3ffu;
    uint32_t bits;
    if (exp == 0) {
        if (man == 0) {
            bits = sign;
        } else {
            exp = 127 - 15 + 1;
            while (!(man & 0x400u)) {
                man <<= 1;
                exp--;
            }
            man &= 0x3ffu;
            bits = sign | (exp << 23) | (man << 13);
        }
    } else if (exp == 31) {
        bits = sign | 0x7f800000u | (man << 13);
    } else {
        bits = sign | ((exp - 15 + 127) << 23) | (man << 13);
    }
    float f;
    memcpy(&f, &bits, 4);
    return f;
}

static uint16_t kagent_float_to_half(float f) {
    uint32_t x;
    memcpy(&x, &f, 4);
    uint16_t sign = (uint16_t)((x >> 16) & 0x8000u);
    uint32_t exp = (x >> 23) & 0xffu;
    uint32_t man = x & 0x7fffffu;
    if (exp == 255) {
        return sign | 0x7c00u | (man ? 0x200u : 0);
    }
    int e = (int)exp - 127 + 15;
    if (e >= 31) {
        return sign | 0x7c00u;
    }
    if (e <= 0) {
        if (e < -10) {
            return sign;
        }
        man |= 0x800000u;
        int shift = 14 - e;
        uint32_t half_man = man >> shift;
        uint32_t rem = man & ((1u << shift) - 1);
        uint32_t mid = 1u << (shift - 1);
        if (rem > mid || (rem == mid && (half_man & 1u))) {
            half_man++;
        }
        return sign | (uint16_t)half_man;
    }
    uint32_t half = ((uint32_t)e << 10) | (man >> 13);
    uint32_t rem = man & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) {
        half++;
    }
    return sign | (uint16_t)half;
}

static int ten_load(const char *path, ten_t *t) {
    FILE *fp = fopen(path, "rb");
    if (!fp) {
        fprintf(stderr, "ten_load: cannot open %s\n", path);
        return 1;
    }
    unsigned char hdr[8];
    if (fread(hdr, 1, 8, fp) != 8 || memcmp(hdr, "TEN1", 4) != 0) {
        fprintf(stderr, "ten_load: bad header in %s\n", path);
        fclose(fp);
        return 1;
    }
    t->dtype = hdr[4];
    t->rank = hdr[5];
    if (t->rank > 8) {
        fclose(fp);
        return 1;
    }
    t->n = 1;
    for (int i = 0; i < t->rank; i++) {
        uint64_t d = 0;
        if (fread(&d, 8, 1, fp) != 1) {
            fclose(fp);
            return 1;
        }
        t->dims[i] = (long)d;
        t->n *= (long)d;
    }
    t->data = (float *)calloc((size_t)(t->n > 0 ? t->n : 1), sizeof(float));
    for (long i = 0; i < t->n; i++) {
        if (t->dtype == 0) {
            uint16_t h;
            if (fread(&h, 2, 1, fp) != 1) break;
            t->data[i] = kagent_half_to_float(h);
        } else if (t->dtype == 1) {
            if (fread(&t->data[i], 4, 1, fp) != 1) break;
        } else {
            int32_t v;
            if (fread(&v, 4, 1, fp) != 1) break;
            t->data[i] = (float)v;
        }
    }
    fclose(fp);
    return 0;
}

static int ten_save(const char *path, const ten_t *t) {
    FILE *fp = fopen(path, "wb");
    if (!fp) {
        fprintf(stderr, "ten_save: cannot open %s\n", path);
        return 1;
    }
    unsigned char hdr[8] = {'T', 'E', 'N', '1', (unsigned char)t->dtype, (unsigned char)t->rank, 0, 0};
    fwrite(hdr, 1, 8, fp);
    for (int i = 0; i < t->rank; i++) {
        uint64_t d = (uint64_t)t->dims[i];
        fwrite(&d, 8, 1, fp);
    }
    for (long i = 0; i < t->n; i++) {
        if (t->dtype == 0) {
            uint16_t h = kagent_float_to_half(t->data[i]);
            fwrite(&h, 2, 1, fp);
        } else if (t->dtype == 1) {
            fwrite(&t->data[i], 4, 1, fp);
        } else {
            int32_t v = (int32_t)lrintf(t->data[i]);
            fwrite(&v, 4, 1, fp);
        }
    }
    fclose(fp);
    return 0;
}

static void ten_free(ten_t *t) {
    free(t->data);
    t->data = NULL;
}

static const char *kagent_arg(int argc, char **argv, const char *name) {
    size_t len = strlen(name);
    for (int i = 1; i < argc; i++) {
        if (strncmp(argv[i], name, len) == 0 && argv[i][len] == '=') {
            return argv[i] + len + 1;
        }
    }
    return NULL;
}

static long arg_int(int argc, char **argv, const char *name, long fallback) {
    const char *v = kagent_arg(argc, argv, name);
    return v ? strtol(v, NULL, 10) : fallback;
}

static double arg_float(int argc, char **argv, const char *name, double fallback) {
    const char *v = kagent_arg(argc, argv, name);
    return v ? strtod(v, NULL) : fallback;
}

/* ---- kernel ---- */
