# Multiway ASAG tests
