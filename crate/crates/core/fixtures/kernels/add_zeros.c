int kernel_main(int argc, char **argv) {
    ten_t z;
    (void)argc;
    if (ten_load(argv[3], &z)) return 1;
    for (long i = 0; i < z.n; i++) z.data[i] = 0.0f;
    int rc = ten_save(argv[3], &z);
    ten_free(&z);
    return rc;
}
