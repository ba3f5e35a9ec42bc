// Placeholder main; the CLI is assembled once the engine modules exist.
int main() { return 0; }
