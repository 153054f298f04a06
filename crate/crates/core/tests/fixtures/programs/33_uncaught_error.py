def divide(a, b):
    return a // b


pairs = [(10, 2), (7, 0)]
for a, b in pairs:
    q = divide(a, b)
    print(q)
