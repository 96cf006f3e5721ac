int kernel_main(int argc, char **argv) {
    volatile unsigned long k = 0;
    (void)argc;
    (void)argv;
    for (;;) k++;
    return 0;
}
