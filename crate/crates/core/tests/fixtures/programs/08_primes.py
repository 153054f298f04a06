def is_prime(n):
    if n < 2:
        return False
    i = 2
    while i * i <= n:
        if n % i == 0:
            return False
        i += 1
    return True


limit = int(input())
primes = [p for p in range(limit) if is_prime(p)]
print(primes)
