calls = 0


def tracked(x):
    global calls
    calls += 1
    return x * 2


results = [tracked(i) for i in range(4)]
print(results)
print(calls)
