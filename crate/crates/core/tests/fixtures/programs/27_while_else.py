target = int(input())
n = 0
while n < 10:
    if n == target:
        print("found", n)
        break
    n += 1
else:
    print("missing")
print("done")
